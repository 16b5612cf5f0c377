//! INI run configuration.
//!
//! Every key is optional and falls back to a default; unknown sections and
//! keys are rejected. Errors name the key as `section.key`.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;

use ini::{Ini, Properties};
use thiserror::Error;

use stochem_core::dynamics::{Coefficients, ConsumptionLaw, SimParams, State, XiMode};
use stochem_core::experiments::Column;
use stochem_core::grid::{make_grid, Grid, ScalarField, VectorField};
use stochem_core::initial::{Axis, ScalarRecipe, VelocityRecipe};
use stochem_core::noise::{make_transport_sigma, VelocityNoiseConfig};
use stochem_core::operators::AdvectionMode;
use stochem_core::SimError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: expected {expected}, got `{value}`")]
    Type { key: String, expected: &'static str, value: String },
    #[error("`{key}` {reason}")]
    Constraint { key: String, reason: String },
}

const SECTIONS: [&str; 7] = ["grid", "physics", "noise", "time", "ic", "output", "experiment"];

struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str) -> Self {
        Self { name, props: ini.section(Some(name)), used: RefCell::new(BTreeSet::new()) }
    }

    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key.to_string());
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::Type {
                key: self.key(key),
                expected,
                value: v.to_string(),
            }),
        }
    }

    fn number(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parse::<f64>(key, "a number")?.unwrap_or(default);
        if !v.is_finite() {
            return Err(self.constraint(key, "must be finite"));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.number(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.constraint(key, format!("must be positive, got {v}")))
        }
    }

    fn nonnegative(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.number(key, default)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.constraint(key, format!("must be non-negative, got {v}")))
        }
    }

    fn count(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parse::<u64>(key, "a non-negative integer")?.unwrap_or(default))
    }

    fn word(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_ascii_lowercase()
    }

    fn choice<T: Copy>(&self, key: &str, default: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
        let w = self.word(key, default);
        options.iter().find(|(name, _)| *name == w).map(|(_, v)| *v).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.constraint(key, format!("must be one of {}, got `{w}`", names.join(", ")))
        })
    }

    fn constraint(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Constraint { key: self.key(key), reason: reason.into() }
    }

    fn finish(&self) -> Result<(), ConfigError> {
        if let Some(p) = self.props {
            let used = self.used.borrow();
            if let Some((k, _)) = p.iter().find(|(k, _)| !used.contains(*k)) {
                return Err(ConfigError::UnknownKey(self.key(k)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Steps between snapshots; 0 writes only the final state.
    pub snapshot_every: u64,
    pub formats: Vec<OutputFormat>,
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Relative amplitude of the twin-run bump.
    pub perturbation: f64,
    /// Seed of the second twin (defaults to the run seed).
    pub second_seed: Option<u64>,
    pub dt_levels: Vec<f64>,
    pub replicas: u64,
    pub columns: Vec<Column>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid,
    pub params: SimParams,
    pub initial: State,
    pub time: TimeConfig,
    pub output: OutputConfig,
    pub experiment: ExperimentConfig,
}

fn sim_error(section: &str, e: SimError) -> ConfigError {
    match e {
        SimError::InvalidParameter { name, reason } => {
            let key = match name {
                "cutoff_width" => "sigma_cutoff_width",
                "mode_decay" => "mode_decay_exponent",
                other => other,
            };
            ConfigError::Constraint { key: format!("{section}.{key}"), reason }
        }
        other => ConfigError::Constraint { key: section.to_string(), reason: other.to_string() },
    }
}

/// Recipe for `field`, uniform at `default_value` when unspecified.
fn scalar_recipe(ic: &Section, field: &str, grid: &Grid, default_value: f64) -> Result<ScalarRecipe, ConfigError> {
    let k = |s: &str| format!("{field}_{s}");
    let kind = ic.word(field, "uniform");
    Ok(match kind.as_str() {
        "uniform" => ScalarRecipe::Uniform { value: ic.number(&k("value"), default_value)? },
        "gaussian_blob" => ScalarRecipe::GaussianBlob {
            background: ic.number(&k("background"), 0.0)?,
            amplitude: ic.number(&k("amplitude"), 1.0)?,
            x0: ic.number(&k("x0"), 0.5 * grid.lx)?,
            y0: ic.number(&k("y0"), 0.5 * grid.ly)?,
            width: ic.positive(&k("width"), 0.1 * grid.lx.min(grid.ly))?,
        },
        "linear_gradient" => ScalarRecipe::LinearGradient {
            low: ic.number(&k("low"), 0.0)?,
            high: ic.number(&k("high"), 1.0)?,
            axis: ic.choice(&k("axis"), "y", &[("x", Axis::X), ("y", Axis::Y)])?,
        },
        "cosine_mode" => ScalarRecipe::CosineMode {
            mean: ic.number(&k("mean"), 0.0)?,
            amplitude: ic.number(&k("amplitude"), 1.0)?,
            p: ic.count(&k("p"), 1)? as u32,
            q: ic.count(&k("q"), 0)? as u32,
        },
        other => {
            return Err(ic.constraint(
                field,
                format!("must be one of uniform, gaussian_blob, linear_gradient, cosine_mode, got `{other}`"),
            ))
        }
    })
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for (name, props) in ini.iter() {
        match name {
            None => {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownKey(k.to_string()));
                }
            }
            Some(n) if !SECTIONS.contains(&n) => return Err(ConfigError::UnknownSection(n.to_string())),
            Some(_) => {}
        }
    }

    let s = Section::new(&ini, "grid");
    let nx = s.count("nx", 64)? as usize;
    let ny = s.count("ny", 64)? as usize;
    let lx = s.positive("lx", 1.0)?;
    let ly = s.positive("ly", 1.0)?;
    s.finish()?;
    let grid = make_grid(nx, ny, lx, ly).map_err(|e| sim_error("grid", e))?;

    let s = Section::new(&ini, "physics");
    let coeffs = Coefficients {
        eta: s.positive("eta", 0.05)?,
        mu: s.positive("mu", 0.1)?,
        delta: s.positive("delta", 0.1)?,
        chi: s.nonnegative("chi", 0.2)?,
        gamma: s.nonnegative("gamma", 0.0)?,
    };
    let xi_mode = s.choice(
        "xi_mode",
        "corrected",
        &[("corrected", XiMode::Corrected), ("eta", XiMode::CellDiffusivity), ("uncorrected", XiMode::Uncorrected)],
    )?;
    let f = match s.word("f_name", "linear").as_str() {
        "linear" => ConsumptionLaw::Linear { rate: s.positive("f_rate", 1.0)? },
        "michaelis_menten" => ConsumptionLaw::MichaelisMenten { vmax: s.positive("f_vmax", 1.0)?, km: s.positive("f_km", 1.0)? },
        "power" => ConsumptionLaw::Power { rate: s.positive("f_rate", 1.0)?, exponent: s.positive("f_exponent", 1.0)? },
        other => return Err(s.constraint("f_name", format!("must be one of linear, michaelis_menten, power, got `{other}`"))),
    };
    let phi_kind = s.choice("phi_kind", "none", &[("none", 0u8), ("linear_y", 1), ("linear_x", 2)])?;
    let strength = s.number("phi_strength", 1.0)?;
    let phi = match phi_kind {
        0 => ScalarField::zeros(grid),
        1 => ScalarField::from_fn(grid, |_, y| strength * y),
        _ => ScalarField::from_fn(grid, |x, _| strength * x),
    };
    let modes = [("upwind", AdvectionMode::UpwindFlux), ("centered", AdvectionMode::CenteredSkew)];
    let scalar_adv = s.choice("scalar_advection", "upwind", &modes)?;
    let velocity_adv = s.choice("velocity_advection", "centered", &modes)?;
    let cfl_safety = s.positive("cfl_safety", 0.5)?;
    let dt_max = s.positive("dt_max", 1e-2)?;
    let k_gn = s.positive("k_gn", 1.0)?;
    s.finish()?;

    let n = Section::new(&ini, "noise");
    let k_modes = n.count("k_modes", 0)? as usize;
    let amplitude = n.nonnegative("amplitude", 0.0)?;
    let decay = n.nonnegative("mode_decay_exponent", 2.0)?;
    let gain = n.nonnegative("multiplicative_gain", 0.0)?;
    let width = n.count("sigma_cutoff_width", 2)? as usize;
    n.finish()?;

    let mut params = SimParams::new(grid, coeffs, xi_mode)
        .map_err(|e| sim_error("physics", e))?
        .with_consumption(f)
        .with_phi(phi)
        .map_err(|e| sim_error("physics", e))?
        .with_advection(scalar_adv, velocity_adv)
        .with_cfl(cfl_safety, dt_max)
        .map_err(|e| sim_error("physics", e))?
        .with_k_gn(k_gn)
        .map_err(|e| sim_error("physics", e))?;
    if coeffs.gamma > 0.0 {
        let sigma = make_transport_sigma(grid, width).map_err(|e| sim_error("noise", e))?;
        params = params.with_sigma(sigma).map_err(|e| sim_error("noise", e))?;
    }
    if k_modes > 0 && amplitude > 0.0 {
        let cfg = VelocityNoiseConfig::new(grid, k_modes, amplitude, decay, gain).map_err(|e| sim_error("noise", e))?;
        params = params.with_velocity_noise(cfg).map_err(|e| sim_error("noise", e))?;
    }

    let t = Section::new(&ini, "time");
    let time = TimeConfig {
        t_end: t.positive("t_end", 1.0)?,
        dt: t.positive("dt", 1e-3)?,
        sample_every: t.count("sample_every", 10)? as usize,
        seed: t.count("seed", 0)?,
    };
    if time.sample_every == 0 {
        return Err(t.constraint("sample_every", "must be at least 1"));
    }
    t.finish()?;

    let ic = Section::new(&ini, "ic");
    let n_recipe = scalar_recipe(&ic, "n", &grid, 1.0)?;
    let c_recipe = scalar_recipe(&ic, "c", &grid, 0.1)?;
    let u_recipe = match ic.word("u", "zero").as_str() {
        "zero" => VelocityRecipe::Zero,
        "taylor_vortex_pair" => VelocityRecipe::TaylorVortexPair { amplitude: ic.nonnegative("u_amplitude", 1.0)? },
        other => return Err(ic.constraint("u", format!("must be one of zero, taylor_vortex_pair, got `{other}`"))),
    };
    ic.finish()?;
    let nf = n_recipe.build(grid).map_err(|e| sim_error("ic", e))?;
    if nf.min() < 0.0 {
        return Err(ic.constraint("n", "initial cell density must be non-negative"));
    }
    let cf = c_recipe.build(grid).map_err(|e| sim_error("ic", e))?;
    if cf.min() < 0.0 {
        return Err(ic.constraint("c", "initial oxygen concentration must be non-negative"));
    }
    let uf: VectorField = u_recipe.build(grid).map_err(|e| sim_error("ic", e))?;
    let initial = State::new(uf, cf, nf, 0.0).map_err(|e| sim_error("ic", e))?;

    let o = Section::new(&ini, "output");
    let directory = PathBuf::from(o.raw("directory").unwrap_or("out"));
    let snapshot_every = o.count("snapshot_every", 0)?;
    let mut formats = Vec::new();
    for f in o.word("formats", "csv").split(',').map(str::trim).filter(|f| !f.is_empty()) {
        formats.push(match f {
            "csv" => OutputFormat::Csv,
            "snapshot" => OutputFormat::Snapshot,
            other => return Err(o.constraint("formats", format!("unknown format `{other}` (csv, snapshot)"))),
        });
    }
    o.finish()?;

    let e = Section::new(&ini, "experiment");
    let perturbation = e.nonnegative("perturbation", 1e-6)?;
    let second_seed = e.parse::<u64>("second_seed", "a non-negative integer")?;
    let dt_levels = match e.raw("dt_levels") {
        None => vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
        Some(list) => list
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite()).ok_or_else(|| ConfigError::Type {
                    key: e.key("dt_levels"),
                    expected: "a comma-separated list of positive numbers",
                    value: list.to_string(),
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let replicas = e.count("replicas", 16)?;
    if replicas == 0 {
        return Err(e.constraint("replicas", "must be at least 1"));
    }
    let columns = match e.raw("columns") {
        None => Column::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|c| {
                Column::from_name(c.trim()).ok_or_else(|| e.constraint("columns", format!("unknown column `{}`", c.trim())))
            })
            .collect::<Result<_, _>>()?,
    };
    e.finish()?;

    Ok(RunConfig {
        grid,
        params,
        initial,
        time,
        output: OutputConfig { directory, snapshot_every, formats },
        experiment: ExperimentConfig { perturbation, second_seed, dt_levels, replicas, columns },
    })
}
