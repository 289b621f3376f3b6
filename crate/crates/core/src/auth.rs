//! Users, credential digests and bearer-token sessions.

use std::fmt;
use std::str::FromStr;

use rusqlite::{params, OptionalExtension, Row};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::db::Db;
use crate::error::{Error, Result};
use crate::ids::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Admin,
    Analyst,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Admin => "admin",
            Role::Analyst => "analyst",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admin" => Ok(Role::Admin),
            "analyst" => Ok(Role::Analyst),
            other => Err(Error::BadRequest(format!("unknown role {other:?}"))),
        }
    }
}

/// The authenticated caller of an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Principal {
    pub user_id: UserId,
    pub role: Role,
}

impl Principal {
    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }
}

/// A registered user. The credential digest is never part of this type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub name: String,
    pub role: Role,
    pub created_at: i64,
}

impl User {
    pub fn principal(&self) -> Principal {
        Principal { user_id: self.id, role: self.role }
    }

    pub(crate) fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        let role: String = r.get("role")?;
        Ok(User {
            id: r.get("id")?,
            name: r.get("name")?,
            role: role.parse().unwrap_or(Role::Analyst),
            created_at: r.get("created_at")?,
        })
    }
}

/// An issued bearer token. Only the token's digest is persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub issued_at: i64,
    pub expires_at: i64,
}

const DIGEST_ROUNDS: u32 = 4096;

fn stretch(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h: [u8; 32] = Sha256::new().chain_update(salt).chain_update(secret.as_bytes()).finalize().into();
    for _ in 1..DIGEST_ROUNDS {
        h = Sha256::new().chain_update(salt).chain_update(h).finalize().into();
    }
    h
}

/// Salted, stretched one-way digest: `sha256-<rounds>$<salt>$<hash>`.
pub fn digest_secret(secret: &str) -> String {
    let salt: [u8; 16] = rand::random();
    format!("sha256-{DIGEST_ROUNDS}${}${}", hex::encode(salt), hex::encode(stretch(&salt, secret)))
}

pub fn verify_secret(digest: &str, secret: &str) -> bool {
    let mut parts = digest.split('$');
    let (Some(_), Some(salt), Some(hash), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    let (Ok(salt), Ok(hash)) = (hex::decode(salt), hex::decode(hash)) else {
        return false;
    };
    constant_time_eq(&stretch(&salt, secret), &hash)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Issue a session for `user_id`. Tokens carry 128 bits from the OS CSPRNG.
pub fn issue_session(db: &Db, user_id: UserId, now: i64, ttl_ms: i64) -> Result<Session> {
    let mut raw = [0u8; 16];
    getrandom::fill(&mut raw).map_err(|e| Error::Storage(format!("entropy source: {e}")))?;
    let token = hex::encode(raw);
    let session = Session { token, user_id, issued_at: now, expires_at: now.saturating_add(ttl_ms) };
    db.tx(|tx| {
        tx.execute(
            "INSERT INTO sessions(token_digest, user_id, issued_at, expires_at) VALUES (?1, ?2, ?3, ?4)",
            params![token_digest(&session.token), user_id, session.issued_at, session.expires_at],
        )?;
        tx.execute("DELETE FROM sessions WHERE expires_at <= ?1", [now])?;
        Ok(())
    })?;
    Ok(session)
}

/// Resolve a bearer token to its principal; expired or unknown tokens fail
/// with [`Error::Unauthorized`].
pub fn authorize(db: &Db, token: &str, now: i64) -> Result<Principal> {
    let found = db.read(|c| {
        Ok(c.query_row(
            "SELECT u.id, u.role, s.expires_at FROM sessions s JOIN users u ON u.id = s.user_id
             WHERE s.token_digest = ?1",
            [token_digest(token)],
            |r| Ok((r.get::<_, UserId>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?)),
        )
        .optional()?)
    })?;
    match found {
        Some((user_id, role, expires_at)) if now < expires_at => {
            Ok(Principal { user_id, role: role.parse()? })
        }
        _ => Err(Error::Unauthorized),
    }
}
