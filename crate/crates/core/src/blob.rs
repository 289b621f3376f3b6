//! Content-addressed blob files keyed by SHA-256 digest.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Handle returned by [`BlobStore::put`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlob {
    /// Lowercase hex SHA-256 of the content; also the storage key.
    pub digest: String,
    pub size: u64,
}

pub struct BlobStore {
    root: PathBuf,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("tmp"))?;
        Ok(BlobStore { root })
    }

    /// Stream `content` into the store. The digest and size are computed
    /// while writing; the file becomes visible only after it is complete.
    pub fn put(&self, mut content: impl Read) -> Result<StoredBlob> {
        let tmp = self.root.join("tmp").join(format!("{:016x}", rand::random::<u64>()));
        let mut file = File::create(&tmp)?;
        let mut hasher = Sha256::new();
        let mut size = 0u64;
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = match content.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    let _ = fs::remove_file(&tmp);
                    return Err(e.into());
                }
            };
            hasher.update(&buf[..n]);
            file.write_all(&buf[..n])?;
            size += n as u64;
        }
        file.sync_all()?;
        drop(file);
        let digest = hex::encode(hasher.finalize());
        let dest = self.path(&digest);
        if dest.exists() {
            fs::remove_file(&tmp)?;
        } else {
            fs::create_dir_all(dest.parent().expect("blob path has a parent"))?;
            fs::rename(&tmp, &dest)?;
        }
        Ok(StoredBlob { digest, size })
    }

    pub fn put_bytes(&self, bytes: &[u8]) -> Result<StoredBlob> {
        self.put(bytes)
    }

    pub fn path(&self, digest: &str) -> PathBuf {
        let (shard, rest) = digest.split_at(2.min(digest.len()));
        self.root.join(shard).join(rest)
    }

    pub fn open_blob(&self, digest: &str) -> Result<File> {
        File::open(self.path(digest)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => Error::StorageCorrupt(format!("blob {digest} missing")),
            _ => e.into(),
        })
    }

    pub fn read(&self, digest: &str) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.open_blob(digest)?.read_to_end(&mut out)?;
        Ok(out)
    }

    /// Copy a blob to `dest` (used to materialize job inputs).
    pub fn copy_to(&self, digest: &str, dest: &Path) -> Result<u64> {
        Ok(fs::copy(self.path(digest), dest)?)
    }

    /// Recompute the digest of a stored blob and compare with its key.
    pub fn verify(&self, digest: &str) -> Result<bool> {
        let mut file = self.open_blob(digest)?;
        let mut hasher = Sha256::new();
        io::copy(&mut file, &mut hasher)?;
        Ok(hex::encode(hasher.finalize()) == digest)
    }
}
