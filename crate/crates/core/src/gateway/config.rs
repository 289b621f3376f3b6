//! Service configuration, read from a TOML file.
//!
//! ```toml
//! listen = "127.0.0.1:8040"
//! data_dir = "/var/lib/shareal"
//! slots = 4
//! admin_secret = "change-me"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::DEFAULT_TIMEOUT_MS;

const HOUR_MS: i64 = 60 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub slots: usize,
    pub default_timeout_ms: i64,
    /// Runner registry file; `<data_dir>/runners.toml` (seeded with the
    /// defaults) when unset.
    pub runners_path: Option<PathBuf>,
    pub session_ttl_ms: i64,
    pub sweep_interval_ms: i64,
    /// How often the scheduler polls running jobs and starts queued ones.
    pub tick_interval_ms: u64,
    /// Account created when the user table is empty.
    pub admin_name: String,
    pub admin_secret: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8040".into(),
            data_dir: PathBuf::from("shareal-data"),
            slots: 2,
            default_timeout_ms: DEFAULT_TIMEOUT_MS,
            runners_path: None,
            session_ttl_ms: 24 * HOUR_MS,
            sweep_interval_ms: HOUR_MS,
            tick_interval_ms: 20,
            admin_name: "admin".into(),
            admin_secret: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let config: ServiceConfig =
            toml::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        self.listen.parse().map_err(|_| Error::ConfigInvalid(format!("listen address {:?}", self.listen)))
    }

    pub fn validate(&self) -> Result<()> {
        self.listen_addr()?;
        let invalid = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.data_dir.as_os_str().is_empty() {
            return invalid("data_dir must be set");
        }
        if self.slots < 1 {
            return invalid("slots must be >= 1");
        }
        if self.default_timeout_ms <= 0 {
            return invalid("default_timeout_ms must be positive");
        }
        if self.session_ttl_ms <= 0 {
            return invalid("session_ttl_ms must be positive");
        }
        if self.sweep_interval_ms <= 0 {
            return invalid("sweep_interval_ms must be positive");
        }
        if self.tick_interval_ms == 0 {
            return invalid("tick_interval_ms must be positive");
        }
        if self.admin_name.trim().is_empty() {
            return invalid("admin_name must not be empty");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ServiceConfig::default();
        c.validate().unwrap();
        assert_eq!(c.session_ttl_ms, 86_400_000);
        assert_eq!(c.sweep_interval_ms, 3_600_000);
    }

    #[test]
    fn parse_and_validate() {
        let c: ServiceConfig = toml::from_str("listen = \"0.0.0.0:9000\"\nslots = 3\ndata_dir = \"/tmp/x\"").unwrap();
        assert_eq!(c.slots, 3);
        c.validate().unwrap();
        let bad = ServiceConfig { slots: 0, ..c.clone() };
        assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
        let bad = ServiceConfig { listen: "nowhere".into(), ..c };
        assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
        assert!(toml::from_str::<ServiceConfig>("slotz = 1").is_err());
    }
}
