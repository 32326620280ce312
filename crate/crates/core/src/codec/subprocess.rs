//! Command-template adapter for external encoders and quality tools.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{AssetRef, Codec, CodecError, EncodeOutcome, RateTolerance, SequenceSource, QP_MAX};
use crate::model::Resolution;

fn default_extension() -> String {
    "mkv".to_string()
}

fn default_key_path() -> String {
    "pooled_metrics.vmaf.mean".to_string()
}

fn default_probe_scale() -> f64 {
    0.001
}

/// Command templates and paths for a real encoder/quality toolchain.
///
/// Templates are split into argv with shell quoting rules, then each
/// `{placeholder}` is substituted. An argument consisting solely of a
/// placeholder that has no value in the current mode is dropped.
///
/// Placeholders:
/// * encode: `{input} {output} {width} {height} {bitrate_kbps} {qp} {pass} {stats}`
/// * upscale: `{input} {output} {width} {height}`
/// * quality: `{reference} {distorted} {output}`
/// * probe: `{input}`; stdout is a bitrate multiplied by `probe_bitrate_scale`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecAdapterConfig {
    pub encode_command_template: String,
    /// Separate template for CQP probes; falls back to the encode template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqp_command_template: Option<String>,
    #[serde(default)]
    pub upscale_command_template: String,
    pub quality_command_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_command_template: Option<String>,
    pub workdir: PathBuf,
    #[serde(default)]
    pub two_pass: bool,
    #[serde(default = "default_extension")]
    pub output_extension: String,
    #[serde(default = "default_key_path")]
    pub quality_key_path: String,
    #[serde(default = "default_probe_scale")]
    pub probe_bitrate_scale: f64,
    #[serde(default)]
    pub rate_tolerance: RateTolerance,
}

impl CodecAdapterConfig {
    pub fn new(encode: &str, quality: &str, workdir: impl Into<PathBuf>) -> Self {
        Self {
            encode_command_template: encode.to_string(),
            cqp_command_template: None,
            upscale_command_template: String::new(),
            quality_command_template: quality.to_string(),
            probe_command_template: None,
            workdir: workdir.into(),
            two_pass: false,
            output_extension: default_extension(),
            quality_key_path: default_key_path(),
            probe_bitrate_scale: default_probe_scale(),
            rate_tolerance: RateTolerance::default(),
        }
    }

    fn cqp_template(&self) -> &str {
        self.cqp_command_template.as_deref().unwrap_or(&self.encode_command_template)
    }

    /// Checks that each template carries the placeholders its mode needs.
    pub fn validate(&self) -> Result<(), CodecError> {
        let need = |template: &str, keys: &[&str]| -> Result<(), CodecError> {
            shell_words::split(template).map_err(|e| CodecError::Template {
                template: template.to_string(),
                message: e.to_string(),
            })?;
            match keys.iter().find(|k| !template.contains(&format!("{{{k}}}"))) {
                Some(k) => Err(CodecError::Template {
                    template: template.to_string(),
                    message: format!("missing placeholder {{{k}}}"),
                }),
                None => Ok(()),
            }
        };
        let mut cbr = vec!["input", "output", "bitrate_kbps"];
        if self.two_pass {
            cbr.push("pass");
        }
        need(&self.encode_command_template, &cbr)?;
        need(self.cqp_template(), &["input", "output", "qp"])?;
        if !self.upscale_command_template.is_empty() {
            need(&self.upscale_command_template, &["input", "output", "width", "height"])?;
        }
        need(&self.quality_command_template, &["reference", "distorted", "output"])?;
        if let Some(probe) = &self.probe_command_template {
            need(probe, &["input"])?;
        }
        Ok(())
    }
}

/// Runs the configured commands; every job writes only below its own
/// subdirectory of `workdir`.
#[derive(Debug, Clone)]
pub struct SubprocessCodec {
    config: CodecAdapterConfig,
}

fn render(template: &str, values: &HashMap<&str, String>) -> Result<Vec<String>, CodecError> {
    let words = shell_words::split(template)
        .map_err(|e| CodecError::Template { template: template.to_string(), message: e.to_string() })?;
    let mut argv = Vec::with_capacity(words.len());
    for word in words {
        let trimmed = word.trim();
        if trimmed.starts_with('{') && trimmed.ends_with('}') && trimmed.matches('{').count() == 1 {
            let key = &trimmed[1..trimmed.len() - 1];
            if !values.contains_key(key) {
                continue;
            }
        }
        let mut arg = word.clone();
        for (k, v) in values {
            arg = arg.replace(&format!("{{{k}}}"), v);
        }
        argv.push(arg);
    }
    if argv.is_empty() {
        return Err(CodecError::Template { template: template.to_string(), message: "empty command".into() });
    }
    Ok(argv)
}

impl SubprocessCodec {
    pub fn new(config: CodecAdapterConfig) -> Result<Self, CodecError> {
        config.validate()?;
        fs::create_dir_all(&config.workdir).map_err(|source| CodecError::Io { path: config.workdir.clone(), source })?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &CodecAdapterConfig {
        &self.config
    }

    fn job_dir(&self, sequence_id: &str, tag: &str) -> Result<PathBuf, CodecError> {
        let safe: String =
            sequence_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
        let dir = self.config.workdir.join("jobs").join(safe).join(tag);
        fs::create_dir_all(&dir).map_err(|source| CodecError::Io { path: dir.clone(), source })?;
        Ok(dir)
    }

    /// Every job directory created under the workdir so far.
    pub fn job_dirs(&self) -> Vec<PathBuf> {
        let root = self.config.workdir.join("jobs");
        let mut out = Vec::new();
        for seq in fs::read_dir(&root).into_iter().flatten().flatten() {
            for job in fs::read_dir(seq.path()).into_iter().flatten().flatten() {
                if job.path().is_dir() {
                    out.push(job.path());
                }
            }
        }
        out.sort();
        out
    }

    /// Removes all job directories.
    pub fn cleanup(&self) -> Result<(), CodecError> {
        let root = self.config.workdir.join("jobs");
        if root.exists() {
            fs::remove_dir_all(&root).map_err(|source| CodecError::Io { path: root, source })?;
        }
        Ok(())
    }

    fn run(&self, argv: &[String], log_dir: &Path) -> Result<String, CodecError> {
        let command = shell_words::join(argv);
        debug!("running {command}");
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .output()
            .map_err(|source| CodecError::Spawn { command: command.clone(), source })?;
        let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
        let log_path = log_dir.join("job.log");
        if let Ok(mut log) = fs::OpenOptions::new().create(true).append(true).open(&log_path) {
            let _ = writeln!(log, "$ {command}\n{stderr}");
        }
        if !output.status.success() {
            let status = output.status.code().map_or_else(|| "a signal".to_string(), |c| format!("status {c}"));
            return Err(CodecError::CommandFailed { command, status, output: stderr.trim().to_string() });
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }

    fn measure_bitrate(&self, source: &SequenceSource, output: &Path, job_dir: &Path) -> Result<f64, CodecError> {
        if !output.exists() {
            return Err(CodecError::MissingOutput(output.to_path_buf()));
        }
        let kbps = match &self.config.probe_command_template {
            Some(probe) => {
                let values = HashMap::from([("input", output.display().to_string())]);
                let stdout = self.run(&render(probe, &values)?, job_dir)?;
                let text = stdout.trim();
                let raw: f64 = text
                    .parse()
                    .map_err(|_| CodecError::Unparsable { what: "bitrate", text: text.to_string() })?;
                raw * self.config.probe_bitrate_scale
            }
            None => {
                let frames = source.frames.ok_or_else(|| CodecError::Template {
                    template: "probe_command_template".into(),
                    message: "no probe command and no frame count in the manifest".into(),
                })?;
                let bytes = fs::metadata(output).map_err(|e| CodecError::Io { path: output.to_path_buf(), source: e })?.len();
                bytes as f64 * 8.0 / (frames as f64 / source.fps) / 1000.0
            }
        };
        if !(kbps.is_finite() && kbps > 0.0) {
            return Err(CodecError::Unparsable { what: "bitrate", text: kbps.to_string() });
        }
        Ok(kbps)
    }

    fn base_values(&self, source: &SequenceSource, resolution: Resolution, output: &Path) -> HashMap<&'static str, String> {
        HashMap::from([
            ("input", source.path.display().to_string()),
            ("output", output.display().to_string()),
            ("width", resolution.width.to_string()),
            ("height", resolution.height.to_string()),
        ])
    }
}

/// Reads a number at a dotted key path from a JSON document.
pub(crate) fn json_number_at(doc: &serde_json::Value, key_path: &str) -> Option<f64> {
    key_path.split('.').try_fold(doc, |node, key| node.get(key))?.as_f64()
}

impl Codec for SubprocessCodec {
    fn encode_cqp(&self, source: &SequenceSource, resolution: Resolution, qp: u8) -> Result<EncodeOutcome, CodecError> {
        if qp > QP_MAX {
            return Err(CodecError::InvalidQp(qp));
        }
        let dir = self.job_dir(&source.sequence_id, &format!("{resolution}_qp{qp}"))?;
        let output = dir.join(format!("out.{}", self.config.output_extension));
        let mut values = self.base_values(source, resolution, &output);
        values.insert("qp", qp.to_string());
        self.run(&render(self.config.cqp_template(), &values)?, &dir)?;
        let rate = self.measure_bitrate(source, &output, &dir)?;
        Ok(EncodeOutcome { actual_bitrate_kbps: rate, asset: AssetRef::File(output) })
    }

    fn encode_cbr(
        &self,
        source: &SequenceSource,
        resolution: Resolution,
        target_bitrate_kbps: u32,
    ) -> Result<EncodeOutcome, CodecError> {
        let dir = self.job_dir(&source.sequence_id, &format!("{resolution}_{target_bitrate_kbps}k"))?;
        let output = dir.join(format!("out.{}", self.config.output_extension));
        let mut values = self.base_values(source, resolution, &output);
        values.insert("bitrate_kbps", target_bitrate_kbps.to_string());
        values.insert("stats", dir.join("pass.stats").display().to_string());
        let passes: &[u8] = if self.config.two_pass { &[1, 2] } else { &[0] };
        for &pass in passes {
            if pass > 0 {
                values.insert("pass", pass.to_string());
            }
            self.run(&render(&self.config.encode_command_template, &values)?, &dir)?;
        }
        let rate = self.measure_bitrate(source, &output, &dir)?;
        self.config.rate_tolerance.check(target_bitrate_kbps, rate)?;
        Ok(EncodeOutcome { actual_bitrate_kbps: rate, asset: AssetRef::File(output) })
    }

    fn measure_quality(
        &self,
        source: &SequenceSource,
        distorted: &EncodeOutcome,
        upscale_to: Resolution,
    ) -> Result<f64, CodecError> {
        let AssetRef::File(encoded) = &distorted.asset else {
            return Err(CodecError::ForeignAsset(distorted.asset.clone()));
        };
        if !encoded.exists() {
            return Err(CodecError::MissingOutput(encoded.clone()));
        }
        let dir = encoded.parent().map(Path::to_path_buf).unwrap_or_else(|| self.config.workdir.clone());
        let distorted_path = if self.config.upscale_command_template.is_empty() {
            encoded.clone()
        } else {
            let up = dir.join(format!("upscaled.{}", self.config.output_extension));
            let values = HashMap::from([
                ("input", encoded.display().to_string()),
                ("output", up.display().to_string()),
                ("width", upscale_to.width.to_string()),
                ("height", upscale_to.height.to_string()),
            ]);
            self.run(&render(&self.config.upscale_command_template, &values)?, &dir)?;
            if !up.exists() {
                return Err(CodecError::MissingOutput(up));
            }
            up
        };
        let report = dir.join("quality.json");
        let values = HashMap::from([
            ("reference", source.path.display().to_string()),
            ("distorted", distorted_path.display().to_string()),
            ("output", report.display().to_string()),
        ]);
        self.run(&render(&self.config.quality_command_template, &values)?, &dir)?;
        let text = fs::read_to_string(&report).map_err(|_| CodecError::MissingOutput(report.clone()))?;
        let doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|_| CodecError::Unparsable { what: "quality report", text: text.clone() })?;
        let score = json_number_at(&doc, &self.config.quality_key_path)
            .ok_or(CodecError::Unparsable { what: "quality score", text })?;
        if !(0.0..=100.0).contains(&score) {
            return Err(CodecError::QualityOutOfRange(score));
        }
        Ok(score)
    }
}
