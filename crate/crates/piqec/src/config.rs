//! Experiment configuration: a TOML file plus command-line overrides,
//! validated up front and re-serialized next to the outputs for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::dynamics::NoiseModel;
use crate::error::{Error, Result};
use crate::half::Half;
use crate::recovery::{default_dt, MemoryCurve, MemorySetup};
use crate::sensing::{ProbeKind, SensingSetup};

// Accepts 5, 4.5, "9/2", or "4.5" wherever a half-integer is expected.
fn opt_half<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Half>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    let raw: Option<Raw> = Option::deserialize(d)?;
    match raw {
        None => Ok(None),
        Some(Raw::Num(v)) => Half::try_from_f64(v)
            .map(Some)
            .ok_or_else(|| serde::de::Error::custom(format!("{v} is not a half-integer"))),
        Some(Raw::Str(s)) => s
            .parse::<Half>()
            .map(Some)
            .map_err(serde::de::Error::custom),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    #[serde(deserialize_with = "opt_half")]
    pub m1: Option<Half>,
    #[serde(deserialize_with = "opt_half")]
    pub m2: Option<Half>,
}

/// Decoherence rates, keyed exactly as in the experiment files:
/// `gamma_*` single-spin, `Gamma_*` collective, `gamma_d` loss.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default)]
    pub gamma_m1: f64,
    #[serde(default)]
    pub gamma_0: f64,
    #[serde(default)]
    pub gamma_p1: f64,
    #[serde(default, rename = "Gamma_m1")]
    pub big_gamma_m1: f64,
    #[serde(default, rename = "Gamma_0")]
    pub big_gamma_0: f64,
    #[serde(default, rename = "Gamma_p1")]
    pub big_gamma_p1: f64,
    #[serde(default)]
    pub gamma_d: f64,
}

impl RatesSection {
    pub fn to_noise(&self) -> NoiseModel {
        NoiseModel {
            collective: [self.big_gamma_m1, self.big_gamma_0, self.big_gamma_p1],
            individual: [self.gamma_m1, self.gamma_0, self.gamma_p1],
            loss: self.gamma_d,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QecSection {
    #[serde(default)]
    pub enabled: bool,
    /// Detection/recovery cadence; defaults to every step.
    pub dt_qec: Option<f64>,
    #[serde(default)]
    pub teleport: bool,
    #[serde(default, deserialize_with = "opt_half")]
    pub j_threshold: Option<Half>,
}

impl Default for QecSection {
    fn default() -> Self {
        QecSection {
            enabled: true,
            dt_qec: None,
            teleport: true,
            j_threshold: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub omega: f64,
    /// Probe selection; defaults to both.
    pub probes: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub reference_curves: bool,
}

fn default_true() -> bool {
    true
}

/// The experiment file. Unknown keys are rejected with the offending name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_spins: u32,
    #[serde(default, deserialize_with = "opt_half")]
    pub initial_j: Option<Half>,
    pub t_max: f64,
    pub dt: Option<f64>,
    pub sample_dt: Option<f64>,
    pub n_traj: u32,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Memory curves to produce; defaults to all four.
    pub curves: Option<Vec<String>>,
    /// Write raw per-trajectory logs (large).
    #[serde(default)]
    pub traj_log: bool,
    /// Optional coefficient-table cache to import instead of rebuilding.
    pub coeff_cache: Option<PathBuf>,
    #[serde(default)]
    pub code: CodeSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub qec: QecSection,
    pub sensing: Option<SensingSection>,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_traj: Option<u32>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub omega: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(v) = overrides.seed {
            self.seed = v;
        }
        if let Some(v) = overrides.n_traj {
            self.n_traj = v;
        }
        if let Some(v) = overrides.threads {
            self.threads = Some(v);
        }
        if let Some(v) = &overrides.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = overrides.t_max {
            self.t_max = v;
        }
        if let Some(v) = overrides.dt {
            self.dt = Some(v);
        }
        if let Some(v) = overrides.omega {
            if let Some(s) = &mut self.sensing {
                s.omega = v;
            }
        }
    }

    pub fn validate_common(&self) -> Result<()> {
        if self.n_spins < 2 {
            return Err(Error::Config("n_spins must be at least 2".into()));
        }
        if self.t_max <= 0.0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if dt <= 0.0 {
                return Err(Error::Config("dt must be positive".into()));
            }
        }
        self.rates.to_noise().validate()?;
        Ok(())
    }

    pub fn initial_j(&self) -> Half {
        self.initial_j.unwrap_or(Half::new(self.n_spins as i32))
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt.unwrap_or(self.t_max / 40.0)
    }

    /// Resolves the memory experiment parameters, filling in the default
    /// step size from the initial block's maximum total rate.
    pub fn to_memory_setup(&self, table: &crate::coeff::CoefficientTable) -> Result<MemorySetup> {
        self.validate_common()?;
        let noise = self.rates.to_noise();
        let initial_j = self.initial_j();
        let sample_dt = self.sample_dt();
        let dt = match self.dt {
            Some(v) => v,
            None => default_dt(self.n_spins, initial_j, &noise, table, sample_dt)?,
        };
        let m1 = self.code.m1.ok_or_else(|| Error::Config("code.m1 is required".into()))?;
        let m2 = self.code.m2.ok_or_else(|| Error::Config("code.m2 is required".into()))?;
        let curves = match &self.curves {
            None => MemoryCurve::all(),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    MemoryCurve::from_id(id)
                        .ok_or_else(|| Error::Config(format!("unknown curve id: {id}")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let qec_steps = match self.qec.dt_qec {
            Some(v) => (v / dt).round().max(1.0) as usize,
            None => 1,
        };
        Ok(MemorySetup {
            n_spins: self.n_spins,
            initial_j,
            m1,
            m2,
            noise,
            t_max: self.t_max,
            dt,
            sample_dt,
            n_traj: self.n_traj,
            seed: self.seed,
            qec_steps_per_cycle: qec_steps,
            j_threshold: self.qec.j_threshold.unwrap_or(Half::new(11)),
            curves: resolve_curves(curves, &self.qec),
        })
    }

    pub fn to_sensing_setup(&self, table: &crate::coeff::CoefficientTable) -> Result<SensingSetup> {
        self.validate_common()?;
        let sensing = self
            .sensing
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sensing] section".into()))?;
        if !sensing.omega.is_finite() {
            return Err(Error::Config("sensing.omega must be finite".into()));
        }
        let noise = self.rates.to_noise();
        let sample_dt = self.sample_dt();
        let dt = match self.dt {
            Some(v) => v,
            None => default_dt(self.n_spins, Half::new(self.n_spins as i32), &noise, table, sample_dt)?,
        };
        let probes = match &sensing.probes {
            None => vec![ProbeKind::Ghz, ProbeKind::Encoded],
            Some(ids) => ids
                .iter()
                .map(|id| {
                    ProbeKind::from_id(id)
                        .ok_or_else(|| Error::Config(format!("unknown probe id: {id}")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let qec_variants = if self.qec.enabled {
            vec![false, true]
        } else {
            vec![false]
        };
        Ok(SensingSetup {
            n_spins: self.n_spins,
            omega: sensing.omega,
            noise,
            t_max: self.t_max,
            dt,
            sample_dt,
            n_traj: self.n_traj,
            seed: self.seed,
            probes,
            qec_variants,
            reference_curves: sensing.reference_curves,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }
}

fn resolve_curves(requested: Vec<MemoryCurve>, qec: &QecSection) -> Vec<MemoryCurve> {
    requested
        .into_iter()
        .filter(|c| match c {
            MemoryCurve::CodeQec | MemoryCurve::CodeQecTeleport => qec.enabled,
            _ => true,
        })
        .filter(|c| *c != MemoryCurve::CodeQecTeleport || qec.teleport)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
n_spins = 20
t_max = 8.0
n_traj = 100
seed = 7
sample_dt = 0.2

[code]
m1 = 5
m2 = 2

[rates]
gamma_m1 = 0.5

[qec]
enabled = true
teleport = true
j_threshold = "11/2"
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        assert_eq!(cfg.n_spins, 20);
        assert_eq!(cfg.initial_j(), Half::from_int(10));
        assert_eq!(cfg.code.m1, Some(Half::from_int(5)));
        let noise = cfg.rates.to_noise();
        assert_eq!(noise.individual[0], 0.5);
        assert_eq!(noise.collective[1], 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = format!("{SAMPLE}\nnot_a_key = 1\n");
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        cfg.apply(&Overrides {
            seed: Some(99),
            n_traj: Some(10),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.n_traj, 10);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.n_spins, cfg.n_spins);
        assert_eq!(back.seed, cfg.seed);
    }
}
