//! Runtime id → shell command template.
//!
//! A template must contain each of `{ARTIFACT}`, `{DATASET}`, `{PARAMS}` and
//! `{OUTPUT}` exactly once. Rendering substitutes single-quoted absolute
//! paths and the result runs under `sh -c` in the job's work directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLACEHOLDERS: [&str; 4] = ["{ARTIFACT}", "{DATASET}", "{PARAMS}", "{OUTPUT}"];

pub const DEFAULT_RUNNERS_TOML: &str = r#"# Runtime id -> command template, run with `sh -c` inside the job directory.
# Every template uses {ARTIFACT}, {DATASET}, {PARAMS} and {OUTPUT} exactly once.
[runtimes]
bash = "bash {ARTIFACT} {DATASET} {PARAMS} {OUTPUT}"
c = "cc -O2 -x c -o analytic.bin {ARTIFACT} -lm && ./analytic.bin {DATASET} {PARAMS} {OUTPUT}"
matlab = "cp {ARTIFACT} analytic.m && SHAREAL_DATASET={DATASET} SHAREAL_PARAMS={PARAMS} SHAREAL_OUTPUT={OUTPUT} matlab -batch analytic"
python = "python3 {ARTIFACT} {DATASET} {PARAMS} {OUTPUT}"
rt-echo = "cp {PARAMS} {OUTPUT} && : {ARTIFACT} {DATASET}"
"#;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerRegistry {
    #[serde(default)]
    runtimes: BTreeMap<String, String>,
}

/// Absolute paths handed to a rendered command.
#[derive(Debug, Clone)]
pub struct JobPaths {
    pub artifact: PathBuf,
    pub dataset: PathBuf,
    pub params: PathBuf,
    pub output: PathBuf,
}

pub fn validate_template(runtime: &str, template: &str) -> Result<()> {
    for p in PLACEHOLDERS {
        let n = template.matches(p).count();
        if n != 1 {
            return Err(Error::ConfigInvalid(format!("runtime {runtime:?}: {p} appears {n} times, expected once")));
        }
    }
    Ok(())
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.to_string_lossy().replace('\'', r"'\''"))
}

impl RunnerRegistry {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let runtimes: BTreeMap<_, _> = entries.into_iter().collect();
        for (id, t) in &runtimes {
            validate_template(id, t)?;
        }
        Ok(RunnerRegistry { runtimes })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let parsed: RunnerRegistry =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(format!("runner registry: {e}")))?;
        RunnerRegistry::new(parsed.runtimes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("runner registry {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_RUNNERS_TOML).expect("builtin registry is valid")
    }

    pub fn contains(&self, runtime: &str) -> bool {
        self.runtimes.contains_key(runtime)
    }

    /// Registry keys in lexicographic order.
    pub fn runtime_ids(&self) -> Vec<String> {
        self.runtimes.keys().cloned().collect()
    }

    pub fn render(&self, runtime: &str, paths: &JobPaths) -> Result<String> {
        let template = self.runtimes.get(runtime).ok_or_else(|| Error::UnknownRuntime(runtime.to_string()))?;
        Ok(template
            .replace("{ARTIFACT}", &shell_quote(&paths.artifact))
            .replace("{DATASET}", &shell_quote(&paths.dataset))
            .replace("{PARAMS}", &shell_quote(&paths.params))
            .replace("{OUTPUT}", &shell_quote(&paths.output)))
    }
}
