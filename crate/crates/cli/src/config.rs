//! Experiment configuration files (TOML).

use std::path::Path;

use bea_core::potential::Builtin;
use bea_core::symbolic::parse_rational;
use bea_core::{Expr, Grid, Potential, Rational, Scheme};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    /// `ou`, `double_well` or `polynomial`.
    pub kind: String,
    /// Rational strings `c_0, c_1, ..` of `V = sum c_k x^k` for `polynomial`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub radius: f64,
    pub nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            radius: 6.0,
            nodes: 2049,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub x0: f64,
    /// Adds a Monte Carlo time-average column to `invariant-bias`.
    #[serde(default)]
    pub time_average: bool,
    /// Largest `p` of the tracked moments `E |X|^{2p}` in `stability`.
    #[serde(default = "default_max_moment")]
    pub max_moment: u32,
}

fn default_max_moment() -> u32 {
    3
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: 10_000,
            steps: 100,
            x0: 0.0,
            time_average: false,
            max_moment: default_max_moment(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    pub scheme: String,
    pub deltas: Vec<f64>,
    /// Truncation order `N` of the modified generator.
    pub order: usize,
    /// Number of implicit-map coefficients `d_k` printed by `derive`.
    #[serde(default = "default_dk_order")]
    pub dk_order: usize,
    /// Rational coefficient strings of the observable `phi`.
    pub observable: Vec<String>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub mc: McSpec,
}

fn default_dk_order() -> usize {
    4
}

fn default_t_end() -> f64 {
    1.0
}

fn default_out() -> String {
    "results".into()
}

/// Largest modified-generator order accepted from a config.
pub const MAX_ORDER: usize = 6;

/// A validated configuration with its parsed objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub potential: Potential,
    pub scheme: Scheme,
    pub observable: Expr,
    pub grid: Grid,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config fields are always representable")
    }

    fn builtin(&self) -> Result<Builtin, CliError> {
        let p = &self.potential;
        match p.kind.as_str() {
            "ou" | "double_well" if !p.coefficients.is_empty() => Err(CliError::Config(format!(
                "potential {} takes no coefficients",
                p.kind
            ))),
            "ou" => Ok(Builtin::Ou),
            "double_well" => Ok(Builtin::DoubleWell),
            "polynomial" => Ok(Builtin::Quartic(rationals(&p.coefficients, "potential")?)),
            other => Err(CliError::Config(format!(
                "unknown potential kind {other:?} (expected ou, double_well or polynomial)"
            ))),
        }
    }

    /// Parses every field and checks the invariants (`0 < delta < delta_0`,
    /// valid observable and grid).
    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let potential = Potential::builtin(&self.builtin()?).map_err(CliError::from_core)?;
        let scheme: Scheme = self.scheme.parse().map_err(CliError::from_core)?;
        if self.observable.is_empty() {
            return Err(CliError::Config("observable needs at least one coefficient".into()));
        }
        let observable = Expr::from_coeffs(&rationals(&self.observable, "observable")?);
        if self.deltas.is_empty() {
            return Err(CliError::Config("deltas must not be empty".into()));
        }
        for &d in &self.deltas {
            potential.check_delta(d).map_err(CliError::from_core)?;
        }
        if self.order > MAX_ORDER {
            return Err(CliError::Config(format!("order must be at most {MAX_ORDER}")));
        }
        if !(self.t_end > 0.0) {
            return Err(CliError::Config("t_end must be positive".into()));
        }
        if !(self.grid.radius > 0.0) {
            return Err(CliError::Config("grid radius must be positive".into()));
        }
        let grid = Grid::symmetric(self.grid.radius, self.grid.nodes).map_err(CliError::from_core)?;
        if self.mc.paths == 0 {
            return Err(CliError::Config("mc.paths must be positive".into()));
        }
        Ok(Experiment {
            config: self.clone(),
            potential,
            scheme,
            observable,
            grid,
        })
    }
}

fn rationals(items: &[String], what: &str) -> Result<Vec<Rational>, CliError> {
    items
        .iter()
        .map(|s| parse_rational(s).map_err(|e| CliError::Config(format!("{what}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
scheme = "split_step"
deltas = [0.4, 0.2]
order = 1
observable = ["0", "0", "1"]

[potential]
kind = "double_well"
"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.grid, GridSpec::default());
        assert_eq!(c.mc.max_moment, 3);
        assert_eq!(c.dk_order, 4);
        let e = c.resolve().unwrap();
        assert_eq!(e.scheme, Scheme::SplitStep);
        assert_eq!(e.observable, Expr::monomial(bea_core::symbolic::int(1), 2, 0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_delta = SAMPLE.replace("0.4, 0.2", "1.5");
        assert!(ExperimentConfig::parse(&bad_delta).unwrap().resolve().is_err());
        let bad_phi = SAMPLE.replace(r#"["0", "0", "1"]"#, r#"["1/0"]"#);
        assert!(ExperimentConfig::parse(&bad_phi).unwrap().resolve().is_err());
        let unknown = format!("{SAMPLE}\nfoo = 1\n");
        assert!(ExperimentConfig::parse(&unknown).is_err());
        let odd = SAMPLE.replace(r#"kind = "double_well""#, "kind = \"polynomial\"\ncoefficients = [\"0\", \"1\", \"0\", \"1\"]");
        assert!(ExperimentConfig::parse(&odd).unwrap().resolve().is_err());
    }

    fn arb_rational() -> impl Strategy<Value = String> {
        (-50i64..50, 1i64..9).prop_map(|(n, d)| format!("{n}/{d}"))
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            prop::collection::vec(1e-3f64..0.9, 1..5),
            0usize..5,
            prop::collection::vec(arb_rational(), 1..5),
            prop::bool::ANY,
            any::<u32>(),
            1e-2f64..20.0,
        )
            .prop_map(|(deltas, order, observable, ou, seed, t_end)| ExperimentConfig {
                potential: PotentialSpec {
                    kind: if ou { "ou" } else { "polynomial" }.into(),
                    coefficients: if ou { vec![] } else { vec!["0".into(), "-1/2".into(), "0".into(), "0".into(), "1/4".into()] },
                },
                scheme: "implicit_euler".into(),
                deltas,
                order,
                dk_order: 4,
                observable,
                t_end,
                out: "out dir".into(),
                grid: GridSpec::default(),
                mc: McSpec {
                    seed: u64::from(seed),
                    ..McSpec::default()
                },
            })
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(c in arb_config()) {
            prop_assert_eq!(ExperimentConfig::parse(&c.render()).unwrap(), c);
        }
    }
}
