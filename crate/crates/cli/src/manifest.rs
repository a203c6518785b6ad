//! `manifest.json`: the resolved options of a run, and replaying them via
//! `--config`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use microyolo_core::checkpoint::config_digest;
use microyolo_core::config::ModelConfig;

const SUBCOMMANDS: [&str; 8] = ["train", "eval", "infer", "quantize", "export", "check-deploy", "profile", "dataset-gen"];

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    /// Every option of the subcommand after defaults were applied.
    pub options: Value,
    pub argv: Vec<String>,
    #[serde(default)]
    pub model_config: Option<String>,
    #[serde(default)]
    pub model_config_sha256: Option<String>,
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(seed: u64, out: &Path, argv: &[String], command: &impl Serialize) -> anyhow::Result<Self> {
        let tagged = serde_json::to_value(command)?;
        let name = tagged["command"].as_str().ok_or_else(|| anyhow!("untagged command"))?.to_string();
        Ok(Self {
            tool: "microyolo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: microyolo_core::VERSION.into(),
            command: name,
            seed,
            out: out.to_path_buf(),
            options: tagged["options"].clone(),
            argv: argv.to_vec(),
            model_config: None,
            model_config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn model_config(&mut self, cfg: &ModelConfig) {
        let text = cfg.to_text();
        let digest: String = config_digest(&text).iter().map(|b| format!("{b:02x}")).collect();
        self.model_config = Some(text);
        self.model_config_sha256 = Some(digest);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Flags reproducing `options`. Arrays become one comma-separated value;
/// `false` and `null` are left out.
pub fn options_to_args(options: &Value) -> anyhow::Result<Vec<String>> {
    let Some(map) = options.as_object() else {
        bail!("options must be a JSON object");
    };
    let mut args = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> anyhow::Result<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                other => bail!("option `{key}` has unsupported value {other}"),
            }
        };
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag),
            Value::Array(items) if items.is_empty() => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<anyhow::Result<Vec<_>>>()?;
                args.push(flag);
                args.push(parts.join(","));
            }
            v => {
                args.push(flag);
                args.push(scalar(v)?);
            }
        }
    }
    Ok(args)
}

/// Rewrites `argv` when it names a `--config` file: the file's seed, output
/// directory and options come first, so anything given explicitly on the
/// command line wins.
pub fn expand_config(argv: &[String]) -> anyhow::Result<Vec<String>> {
    let mut rest = Vec::new();
    let mut config: Option<String> = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" {
            config = Some(argv.get(i + 1).cloned().ok_or_else(|| anyhow!("--config needs a file"))?);
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else {
            rest.push(a.clone());
        }
        i += 1;
    }
    let Some(config) = config else {
        return Ok(argv.to_vec());
    };
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading --config {config}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing --config {config}"))?;
    let command = value["command"]
        .as_str()
        .ok_or_else(|| anyhow!("{config}: missing \"command\""))?
        .to_string();
    if !SUBCOMMANDS.contains(&command.as_str()) {
        bail!("{config}: unknown command `{command}`");
    }
    let user_command = rest.iter().position(|a| SUBCOMMANDS.contains(&a.as_str()));
    if let Some(pos) = user_command {
        if rest[pos] != command {
            bail!("{config} is for `{command}`, not `{}`", rest[pos]);
        }
        rest.remove(pos);
    }

    let mut out = vec![argv[0].clone()];
    if let Some(seed) = value.get("seed").and_then(Value::as_u64) {
        out.extend(["--seed".to_string(), seed.to_string()]);
    }
    if let Some(dir) = value.get("out").and_then(Value::as_str) {
        out.extend(["--out".to_string(), dir.to_string()]);
    }
    out.push(command);
    out.extend(options_to_args(value.get("options").unwrap_or(&Value::Null))?);
    out.extend(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn options_become_flags() {
        let v = serde_json::json!({
            "epochs_float": 5,
            "hflip": true,
            "grad_clip": null,
            "milestones": [0.5, 0.8],
            "model": "ref-88",
            "quiet": false,
        });
        assert_eq!(
            options_to_args(&v).unwrap(),
            strings(&["--epochs-float", "5", "--hflip", "--milestones", "0.5,0.8", "--model", "ref-88"])
        );
    }

    #[test]
    fn config_expansion_puts_explicit_flags_last() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"command": "dataset-gen", "seed": 7, "out": "ds", "options": {"n": 10, "classes": 1}}"#).unwrap();
        let argv = strings(&["microyolo", "--config", path.to_str().unwrap(), "dataset-gen", "--n", "3"]);
        assert_eq!(
            expand_config(&argv).unwrap(),
            strings(&["microyolo", "--seed", "7", "--out", "ds", "dataset-gen", "--classes", "1", "--n", "10", "--n", "3"])
        );
        let wrong = strings(&["microyolo", "--config", path.to_str().unwrap(), "train"]);
        assert!(expand_config(&wrong).is_err());
    }

    #[test]
    fn without_config_argv_is_untouched() {
        let argv = strings(&["microyolo", "check-deploy"]);
        assert_eq!(expand_config(&argv).unwrap(), argv);
    }
}
