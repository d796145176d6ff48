//! Run configuration: a flat `key = value` text format with dotted key
//! prefixes, strict unknown-key rejection, CLI overrides, and a canonical
//! serialization (`effective_text`) that reparses to an identical config.

use crate::encoding::{EncoderSpec, LogFilterSpec};
use crate::error::{CsnnError, Result};
use crate::plasticity::{CombinedRuleParams, PowerLawParams, PstdpParams, ThresholdAdaptParams};
use crate::sim::{LifParams, SimClock};
use crate::topology::NetworkSpec;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Mnist,
    ImageDir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt_ms: f64,
    pub presentation_ms: f64,

    pub tau_mem_ms: f64,
    pub mu_leak: f64,
    pub v_thresh: f64,
    pub v_thresh_fc: Option<f64>,
    pub v_reset: f64,
    pub refractory_ms: f64,

    pub max_rate_hz: f64,

    pub mu_plus: f64,
    pub mu_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
    pub powerlaw_lambda: f64,
    pub powerlaw_tau_ms: f64,
    pub theta_offset: f64,
    pub w_max: f64,
    pub weight_exp: f64,
    pub printed_exponent: bool,
    pub w_min: f64,

    pub theta_increment: f64,
    pub theta_tau_ms: f64,

    pub arch: String,
    pub input_h: usize,
    pub input_w: usize,
    pub kernels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub pool_window_ms: f64,
    pub classes: usize,

    pub wta_on: bool,
    pub inhibit_radius: u32,

    pub epochs: usize,
    pub unsup_epochs: Option<usize>,
    pub sup_epochs: Option<usize>,
    pub inter_pattern_reset: bool,
    pub seed: u64,

    pub data_kind: DataKind,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub data_root: String,
    pub data_classes: Vec<String>,
    pub log_filter_on: bool,
    pub log_sigma: f64,
    pub log_kernel: usize,
    pub resize_w: usize,
    pub resize_h: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub split_train_per_class: usize,
    pub split_seed: u64,

    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pstdp = PstdpParams::default();
        let pl = PowerLawParams::default();
        let adapt = ThresholdAdaptParams::default();
        let lif = LifParams::default();
        RunConfig {
            dt_ms: 0.5,
            presentation_ms: 50.0,
            tau_mem_ms: lif.tau_mem_ms,
            mu_leak: lif.mu_leak,
            v_thresh: lif.v_thresh,
            v_thresh_fc: None,
            v_reset: lif.v_reset,
            refractory_ms: lif.refractory_ms,
            max_rate_hz: 500.0,
            mu_plus: pstdp.mu_plus,
            mu_minus: pstdp.mu_minus,
            tau_plus_ms: pstdp.tau_plus_ms,
            tau_minus_ms: pstdp.tau_minus_ms,
            powerlaw_lambda: pl.lambda,
            powerlaw_tau_ms: pl.tau_ms,
            theta_offset: pl.theta_offset,
            w_max: pl.w_max,
            weight_exp: pl.weight_exp,
            printed_exponent: pl.printed_exponent,
            w_min: 0.0,
            theta_increment: adapt.theta_increment,
            theta_tau_ms: adapt.theta_tau_ms,
            arch: "1C-1S-FC".to_string(),
            input_h: 28,
            input_w: 28,
            kernels: vec![16],
            kernel_sizes: vec![5],
            pool_window_ms: 10.0,
            classes: 10,
            wta_on: true,
            inhibit_radius: 2,
            epochs: 25,
            unsup_epochs: None,
            sup_epochs: None,
            inter_pattern_reset: true,
            seed: 0,
            data_kind: DataKind::Mnist,
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
            data_root: String::new(),
            data_classes: Vec::new(),
            log_filter_on: true,
            log_sigma: 1.0,
            log_kernel: 7,
            resize_w: 40,
            resize_h: 40,
            train_per_class: 0,
            test_per_class: 0,
            split_train_per_class: 0,
            split_seed: 0,
            out_dir: "runs/out".to_string(),
        }
    }
}

fn bad_value(key: &str, value: &str) -> CsnnError {
    CsnnError::config(format!("config key '{key}': cannot parse value '{value}'"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, value))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value)),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad_value(key, value)))
        .collect()
}

fn join_usize_list(list: &[usize]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sim.dt_ms" => self.dt_ms = parse_num(key, value)?,
            "sim.presentation_ms" => self.presentation_ms = parse_num(key, value)?,
            "lif.tau_mem_ms" => self.tau_mem_ms = parse_num(key, value)?,
            "lif.mu_leak" => self.mu_leak = parse_num(key, value)?,
            "lif.v_thresh" => self.v_thresh = parse_num(key, value)?,
            "lif.v_thresh_fc" => self.v_thresh_fc = Some(parse_num(key, value)?),
            "lif.v_reset" => self.v_reset = parse_num(key, value)?,
            "lif.refractory_ms" => self.refractory_ms = parse_num(key, value)?,
            "encoder.max_rate_hz" => self.max_rate_hz = parse_num(key, value)?,
            "plasticity.mu_plus" => self.mu_plus = parse_num(key, value)?,
            "plasticity.mu_minus" => self.mu_minus = parse_num(key, value)?,
            "plasticity.tau_plus_ms" => self.tau_plus_ms = parse_num(key, value)?,
            "plasticity.tau_minus_ms" => self.tau_minus_ms = parse_num(key, value)?,
            "plasticity.lambda" => self.powerlaw_lambda = parse_num(key, value)?,
            "plasticity.tau_ms" => self.powerlaw_tau_ms = parse_num(key, value)?,
            "plasticity.theta_offset" => self.theta_offset = parse_num(key, value)?,
            "plasticity.w_max" => self.w_max = parse_num(key, value)?,
            "plasticity.weight_exp" => self.weight_exp = parse_num(key, value)?,
            "plasticity.printed_exponent" => self.printed_exponent = parse_bool(key, value)?,
            "plasticity.w_min" => self.w_min = parse_num(key, value)?,
            "homeostasis.theta_increment" => self.theta_increment = parse_num(key, value)?,
            "homeostasis.theta_tau_ms" => self.theta_tau_ms = parse_num(key, value)?,
            "arch.name" => self.arch = value.to_string(),
            "arch.input_h" => self.input_h = parse_num(key, value)?,
            "arch.input_w" => self.input_w = parse_num(key, value)?,
            "arch.kernels" => self.kernels = parse_usize_list(key, value)?,
            "arch.kernel_sizes" => self.kernel_sizes = parse_usize_list(key, value)?,
            "arch.pool_window_ms" => self.pool_window_ms = parse_num(key, value)?,
            "arch.classes" => self.classes = parse_num(key, value)?,
            "competition.wta_on" => self.wta_on = parse_bool(key, value)?,
            "competition.inhibit_radius" => self.inhibit_radius = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.unsup_epochs" => self.unsup_epochs = Some(parse_num(key, value)?),
            "train.sup_epochs" => self.sup_epochs = Some(parse_num(key, value)?),
            "train.inter_pattern_reset" => self.inter_pattern_reset = parse_bool(key, value)?,
            "train.seed" => self.seed = parse_num(key, value)?,
            "data.kind" => {
                self.data_kind = match value {
                    "mnist" => DataKind::Mnist,
                    "image_dir" => DataKind::ImageDir,
                    _ => return Err(bad_value(key, value)),
                }
            }
            "data.train_images" => self.train_images = value.to_string(),
            "data.train_labels" => self.train_labels = value.to_string(),
            "data.test_images" => self.test_images = value.to_string(),
            "data.test_labels" => self.test_labels = value.to_string(),
            "data.root" => self.data_root = value.to_string(),
            "data.classes" => {
                // An empty value clears the list, so the canonical text
                // round-trips even when no class names are set.
                self.data_classes = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "data.log_filter" => self.log_filter_on = parse_bool(key, value)?,
            "data.log_sigma" => self.log_sigma = parse_num(key, value)?,
            "data.log_kernel" => self.log_kernel = parse_num(key, value)?,
            "data.resize_w" => self.resize_w = parse_num(key, value)?,
            "data.resize_h" => self.resize_h = parse_num(key, value)?,
            "data.train_per_class" => self.train_per_class = parse_num(key, value)?,
            "data.test_per_class" => self.test_per_class = parse_num(key, value)?,
            "data.split_train_per_class" => self.split_train_per_class = parse_num(key, value)?,
            "data.split_seed" => self.split_seed = parse_num(key, value)?,
            "output.dir" => self.out_dir = value.to_string(),
            _ => return Err(CsnnError::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parse the text format: one `key = value` per line, `#` comments,
    /// blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CsnnError::config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CsnnError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Load a file and apply `key=value` override strings in order.
    pub fn from_sources(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::load(path)?;
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                CsnnError::config(format!("override '{item}' is not of the form key=value"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Canonical serialization: reparsing this text reproduces `self`
    /// exactly (floats print with shortest round-trip representation).
    pub fn effective_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("sim.dt_ms", self.dt_ms.to_string());
        put("sim.presentation_ms", self.presentation_ms.to_string());
        put("lif.tau_mem_ms", self.tau_mem_ms.to_string());
        put("lif.mu_leak", self.mu_leak.to_string());
        put("lif.v_thresh", self.v_thresh.to_string());
        if let Some(v) = self.v_thresh_fc {
            put("lif.v_thresh_fc", v.to_string());
        }
        put("lif.v_reset", self.v_reset.to_string());
        put("lif.refractory_ms", self.refractory_ms.to_string());
        put("encoder.max_rate_hz", self.max_rate_hz.to_string());
        put("plasticity.mu_plus", self.mu_plus.to_string());
        put("plasticity.mu_minus", self.mu_minus.to_string());
        put("plasticity.tau_plus_ms", self.tau_plus_ms.to_string());
        put("plasticity.tau_minus_ms", self.tau_minus_ms.to_string());
        put("plasticity.lambda", self.powerlaw_lambda.to_string());
        put("plasticity.tau_ms", self.powerlaw_tau_ms.to_string());
        put("plasticity.theta_offset", self.theta_offset.to_string());
        put("plasticity.w_max", self.w_max.to_string());
        put("plasticity.weight_exp", self.weight_exp.to_string());
        put("plasticity.printed_exponent", self.printed_exponent.to_string());
        put("plasticity.w_min", self.w_min.to_string());
        put("homeostasis.theta_increment", self.theta_increment.to_string());
        put("homeostasis.theta_tau_ms", self.theta_tau_ms.to_string());
        put("arch.name", self.arch.clone());
        put("arch.input_h", self.input_h.to_string());
        put("arch.input_w", self.input_w.to_string());
        put("arch.kernels", join_usize_list(&self.kernels));
        put("arch.kernel_sizes", join_usize_list(&self.kernel_sizes));
        put("arch.pool_window_ms", self.pool_window_ms.to_string());
        put("arch.classes", self.classes.to_string());
        put("competition.wta_on", self.wta_on.to_string());
        put("competition.inhibit_radius", self.inhibit_radius.to_string());
        put("train.epochs", self.epochs.to_string());
        if let Some(v) = self.unsup_epochs {
            put("train.unsup_epochs", v.to_string());
        }
        if let Some(v) = self.sup_epochs {
            put("train.sup_epochs", v.to_string());
        }
        put("train.inter_pattern_reset", self.inter_pattern_reset.to_string());
        put("train.seed", self.seed.to_string());
        put(
            "data.kind",
            match self.data_kind {
                DataKind::Mnist => "mnist".to_string(),
                DataKind::ImageDir => "image_dir".to_string(),
            },
        );
        put("data.train_images", self.train_images.clone());
        put("data.train_labels", self.train_labels.clone());
        put("data.test_images", self.test_images.clone());
        put("data.test_labels", self.test_labels.clone());
        put("data.root", self.data_root.clone());
        put("data.classes", self.data_classes.join(","));
        put("data.log_filter", self.log_filter_on.to_string());
        put("data.log_sigma", self.log_sigma.to_string());
        put("data.log_kernel", self.log_kernel.to_string());
        put("data.resize_w", self.resize_w.to_string());
        put("data.resize_h", self.resize_h.to_string());
        put("data.train_per_class", self.train_per_class.to_string());
        put("data.test_per_class", self.test_per_class.to_string());
        put("data.split_train_per_class", self.split_train_per_class.to_string());
        put("data.split_seed", self.split_seed.to_string());
        put("output.dir", self.out_dir.clone());
        s
    }

    pub fn sim_clock(&self) -> Result<SimClock> {
        SimClock::new(self.dt_ms, self.presentation_ms)
    }

    /// LIF parameters for conv layers (and the default for everything).
    pub fn lif_conv(&self) -> LifParams {
        LifParams {
            tau_mem_ms: self.tau_mem_ms,
            mu_leak: self.mu_leak,
            v_thresh: self.v_thresh,
            v_reset: self.v_reset,
            refractory_ms: self.refractory_ms,
        }
    }

    /// LIF parameters for the classifier layer; threshold may be overridden.
    pub fn lif_fc(&self) -> LifParams {
        LifParams {
            v_thresh: self.v_thresh_fc.unwrap_or(self.v_thresh),
            ..self.lif_conv()
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            max_rate_hz: self.max_rate_hz,
            duration_ms: self.presentation_ms,
            rng_seed: self.seed,
        }
    }

    pub fn rule_params(&self) -> CombinedRuleParams {
        CombinedRuleParams {
            pstdp: PstdpParams {
                mu_plus: self.mu_plus,
                mu_minus: self.mu_minus,
                tau_plus_ms: self.tau_plus_ms,
                tau_minus_ms: self.tau_minus_ms,
            },
            powerlaw: PowerLawParams {
                lambda: self.powerlaw_lambda,
                tau_ms: self.powerlaw_tau_ms,
                theta_offset: self.theta_offset,
                w_max: self.w_max,
                weight_exp: self.weight_exp,
                printed_exponent: self.printed_exponent,
            },
            w_min: self.w_min,
        }
    }

    pub fn adapt_params(&self) -> ThresholdAdaptParams {
        ThresholdAdaptParams {
            theta_increment: self.theta_increment,
            theta_tau_ms: self.theta_tau_ms,
        }
    }

    pub fn log_spec(&self) -> LogFilterSpec {
        LogFilterSpec { sigma: self.log_sigma, kernel_size: self.log_kernel }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::preset(
            &self.arch,
            self.input_h,
            self.input_w,
            &self.kernels,
            &self.kernel_sizes,
            self.pool_window_ms,
            self.classes,
        )
    }

    pub fn unsup_epochs(&self) -> usize {
        self.unsup_epochs.unwrap_or(self.epochs)
    }

    pub fn sup_epochs(&self) -> usize {
        self.sup_epochs.unwrap_or(self.epochs)
    }

    /// Check every owned invariant; the network spec, clock and parameter
    /// sets must all construct cleanly.
    pub fn validate(&self) -> Result<()> {
        let clock = self.sim_clock()?;
        self.lif_conv().validate(clock.dt_ms())?;
        self.lif_fc().validate(clock.dt_ms())?;
        self.encoder_spec().validate(clock.dt_ms())?;
        self.rule_params().validate()?;
        self.adapt_params().validate(clock.dt_ms())?;
        self.log_spec().validate()?;
        self.network_spec()?;
        if self.epochs == 0 || self.unsup_epochs() == 0 && self.sup_epochs() == 0 {
            return Err(CsnnError::config("at least one training epoch is required"));
        }
        if self.presentation_ms < self.pool_window_ms {
            return Err(CsnnError::config(
                "presentation must cover at least one pool count window",
            ));
        }
        if self.resize_w == 0 || self.resize_h == 0 {
            return Err(CsnnError::config("resize dimensions must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.effective_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.effective_text(), text);
    }

    #[test]
    fn optional_keys_round_trip_when_set() {
        let mut cfg = RunConfig::default();
        cfg.apply("lif.v_thresh_fc", "2.5").unwrap();
        cfg.apply("train.unsup_epochs", "2").unwrap();
        cfg.apply("train.sup_epochs", "7").unwrap();
        let back = RunConfig::parse(&cfg.effective_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.v_thresh_fc, Some(2.5));
        assert_eq!(back.unsup_epochs(), 2);
        assert_eq!(back.sup_epochs(), 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("nope.key = 1").is_err());
        assert!(RunConfig::parse("sim.dt_ms = fast").is_err());
        assert!(RunConfig::parse("competition.wta_on = yes").is_err());
        assert!(RunConfig::parse("just a line").is_err());
        assert!(RunConfig::parse("data.kind = csv").is_err());
    }

    #[test]
    fn comments_blanks_and_lists_parse() {
        let text = "# a comment\n\narch.kernels = 8, 12\narch.name = 2C-1S-FC\n  arch.classes=4\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.kernels, vec![8, 12]);
        assert_eq!(cfg.arch, "2C-1S-FC");
        assert_eq!(cfg.classes, 4);
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "train.seed = 5\narch.kernels = 4\n").unwrap();
        let cfg = RunConfig::from_sources(
            &path,
            &["train.seed=9".to_string(), "arch.kernels=32".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.kernels, vec![32]);
        assert!(RunConfig::from_sources(&path, &["oops".to_string()]).is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_settings() {
        let mut cfg = RunConfig::default();
        cfg.dt_ms = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.kernel_sizes = vec![4];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.presentation_ms = 5.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.v_thresh_fc = Some(-1.0);
        assert!(cfg.validate().is_err());
    }
}
