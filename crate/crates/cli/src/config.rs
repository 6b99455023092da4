//! Run configuration: INI file with dotted keys, command-line overrides,
//! validation and the resolved echo embedded in every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;
use proxbridge::basis::{BasisSpec, Family};
use proxbridge::oracle::presets;
use proxbridge::simulation::{DgpSpec, LinearGaussianSpec};
use proxbridge::{DiscreteJoint, EstimatorConfig};

pub const SEED_ENV: &str = "PROXBRIDGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Simulate,
    Mc,
    Oracle,
}

const BASIS_KEYS: [&str; 5] = ["family", "degree", "knots", "per_arm", "count"];
const LINEAR_KEYS: [&str; 17] = [
    "z_u", "z_x", "w_u", "w_x", "a0", "a_u", "a_x", "y0", "y_a", "y_u", "y_x", "sd_u", "sd_x",
    "sd_z", "sd_w", "sd_y", "trunc_sd",
];

fn known_key(key: &str) -> bool {
    const FIXED: [&str; 13] = [
        "run.seed",
        "run.out",
        "run.jobs",
        "data.path",
        "estimator.kappa",
        "estimator.level",
        "dgp.kind",
        "dgp.preset",
        "dgp.joint",
        "dgp.n",
        "dgp.confounding",
        "mc.n_ladder",
        "mc.replications",
    ];
    if FIXED.contains(&key) {
        return true;
    }
    match key.split_once('.') {
        Some(("bridge_basis" | "instrument_basis", k)) => BASIS_KEYS.contains(&k),
        Some(("dgp", k)) => LINEAR_KEYS.contains(&k),
        _ => false,
    }
}

/// Flat `section.key -> value` map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini =
            Ini::load_from_str_noescape(text).map_err(|e| anyhow!("malformed config: {e}"))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{}.{}", s.trim(), k.trim()),
                    None => k.trim().to_string(),
                };
                values.insert(key, v.trim().to_string());
            }
        }
        Ok(RawConfig { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_ini_str(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{assignment}` must look like section.key=value"))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn check_keys(&self) -> Result<()> {
        for key in self.values.keys() {
            if !known_key(key) {
                bail!("unknown configuration key `{key}`");
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| anyhow!("invalid value `{v}` for `{key}`: {e}")),
        }
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| anyhow!("missing required key `{key}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DgpChoice {
    Preset(String),
    Joint(PathBuf),
    LinearGaussian(LinearGaussianSpec),
}

impl DgpChoice {
    pub fn discrete_joint(&self) -> Result<DiscreteJoint> {
        match self {
            DgpChoice::Preset(name) => {
                presets::by_name(name).ok_or_else(|| anyhow!("unknown preset `{name}`"))
            }
            DgpChoice::Joint(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read joint {}", path.display()))?;
                Ok(DiscreteJoint::from_json(&text)?)
            }
            DgpChoice::LinearGaussian(_) => {
                bail!("this command needs a discrete data-generating process")
            }
        }
    }

    pub fn build(&self) -> Result<DgpSpec> {
        match self {
            DgpChoice::LinearGaussian(s) => Ok(DgpSpec::LinearGaussian(s.clone())),
            _ => Ok(DgpSpec::Discrete(self.discrete_joint()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub data_path: Option<PathBuf>,
    pub estimator: EstimatorConfig,
    pub dgp: DgpChoice,
    pub dgp_n: Option<usize>,
    pub n_ladder: Vec<usize>,
    pub replications: usize,
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| anyhow!("invalid value `{v}` for `{key}`: {e}"))
        })
        .collect()
}

fn parse_basis(raw: &RawConfig, section: &str) -> Result<BasisSpec> {
    let key = |k: &str| format!("{section}.{k}");
    let family = match raw.get(&key("family")) {
        None => Family::Auto,
        Some(v) => v
            .parse()
            .map_err(|e: String| anyhow!("invalid value for `{}`: {e}", key("family")))?,
    };
    let degree = match raw.get(&key("degree")) {
        None | Some("auto") => vec![],
        Some(v) => parse_list(&key("degree"), v)?,
    };
    let optional = |k: &str, none_word: &str| -> Result<Option<usize>> {
        match raw.get(&key(k)) {
            None => Ok(None),
            Some(v) if v == none_word => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("invalid value `{v}` for `{}`: {e}", key(k))),
        }
    };
    let spec = BasisSpec {
        family,
        degree,
        interior_knots: optional("knots", "auto")?,
        per_arm: raw.parse(&key("per_arm"), true)?,
        count: optional("count", "all")?,
    };
    spec.validate()
        .with_context(|| format!("in section `{section}`"))?;
    Ok(spec)
}

fn parse_linear(raw: &RawConfig) -> Result<LinearGaussianSpec> {
    let d = LinearGaussianSpec::default();
    let f = |k: &str, default: f64| raw.parse(&format!("dgp.{k}"), default);
    let spec = LinearGaussianSpec {
        z_u: f("z_u", d.z_u)?,
        z_x: f("z_x", d.z_x)?,
        w_u: f("w_u", d.w_u)?,
        w_x: f("w_x", d.w_x)?,
        a0: f("a0", d.a0)?,
        a_u: f("a_u", d.a_u)?,
        a_x: f("a_x", d.a_x)?,
        y0: f("y0", d.y0)?,
        y_a: f("y_a", d.y_a)?,
        y_u: f("y_u", d.y_u)?,
        y_x: f("y_x", d.y_x)?,
        sd_u: f("sd_u", d.sd_u)?,
        sd_x: f("sd_x", d.sd_x)?,
        sd_z: f("sd_z", d.sd_z)?,
        sd_w: f("sd_w", d.sd_w)?,
        sd_y: f("sd_y", d.sd_y)?,
        trunc_sd: f("trunc_sd", d.trunc_sd)?,
    };
    let spec = if raw.parse("dgp.confounding", true)? {
        spec
    } else {
        spec.without_confounding()
    };
    spec.validate()?;
    Ok(spec)
}

fn existing_path(key: &str, v: &str) -> Result<PathBuf> {
    let p = PathBuf::from(v);
    if !p.exists() {
        bail!("`{key}` points to {}, which does not exist", p.display());
    }
    Ok(p)
}

impl RunConfig {
    /// Validates `raw` for `command`, filling defaults.
    /// The seed falls back to `PROXBRIDGE_SEED`, then to 0.
    pub fn resolve(command: Command, raw: &RawConfig) -> Result<Self> {
        Self::resolve_with_env(command, raw, std::env::var(SEED_ENV).ok())
    }

    pub fn resolve_with_env(
        command: Command,
        raw: &RawConfig,
        env_seed: Option<String>,
    ) -> Result<Self> {
        raw.check_keys()?;
        let seed = match (raw.get("run.seed"), env_seed) {
            (Some(_), _) => raw.parse("run.seed", 0u64)?,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|e| anyhow!("invalid {SEED_ENV} `{v}`: {e}"))?,
            (None, None) => 0,
        };
        let estimator = EstimatorConfig {
            bridge_basis: parse_basis(raw, "bridge_basis")?,
            instrument_basis: parse_basis(raw, "instrument_basis")?,
            kappa: raw.parse("estimator.kappa", 1.0)?,
            level: raw.parse("estimator.level", 0.95)?,
        };
        estimator.validate()?;

        let data_path = match command {
            Command::Estimate => Some(existing_path("data.path", raw.required("data.path")?)?),
            _ => None,
        };
        let dgp = match raw.get("dgp.kind").unwrap_or("preset") {
            "preset" => {
                let name = raw.get("dgp.preset").unwrap_or("nonunique");
                if presets::by_name(name).is_none() {
                    bail!(
                        "unknown preset `{name}` for `dgp.preset` (known: {})",
                        presets::PRESET_NAMES.join(", ")
                    );
                }
                DgpChoice::Preset(name.to_string())
            }
            "joint" => DgpChoice::Joint(existing_path("dgp.joint", raw.required("dgp.joint")?)?),
            "linear_gaussian" => DgpChoice::LinearGaussian(parse_linear(raw)?),
            other => {
                bail!("invalid value `{other}` for `dgp.kind` (preset, joint or linear_gaussian)")
            }
        };
        if command == Command::Oracle && matches!(dgp, DgpChoice::LinearGaussian(_)) {
            bail!("`oracle` needs `dgp.kind` = preset or joint");
        }
        let dgp_n = match command {
            Command::Simulate => Some(
                raw.required("dgp.n")?
                    .parse()
                    .map_err(|e| anyhow!("invalid value for `dgp.n`: {e}"))?,
            ),
            _ => None,
        };
        let n_ladder = parse_list(
            "mc.n_ladder",
            raw.get("mc.n_ladder").unwrap_or("500,2000,8000"),
        )?;
        let replications = raw.parse("mc.replications", 100usize)?;
        if command == Command::Mc {
            if replications < 2 {
                bail!("`mc.replications` must be at least 2");
            }
            if n_ladder.is_empty() || n_ladder[0] == 0 || n_ladder.windows(2).any(|w| w[0] >= w[1])
            {
                bail!("`mc.n_ladder` must be positive and strictly increasing");
            }
        }
        Ok(RunConfig {
            command,
            seed,
            out: PathBuf::from(raw.get("run.out").unwrap_or("out")),
            jobs: raw.parse("run.jobs", 0usize)?,
            data_path,
            estimator,
            dgp,
            dgp_n,
            n_ladder,
            replications,
        })
    }

    /// Resolved settings that can affect results (output directory and
    /// thread count are left out, so artifacts are comparable across them).
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut e = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            e.insert(k.to_string(), v);
        };
        let uses_estimator = matches!(self.command, Command::Estimate | Command::Mc);
        let uses_dgp = self.command != Command::Estimate;
        if let Some(p) = &self.data_path {
            put("data.path", p.display().to_string());
        }
        put("run.seed", self.seed.to_string());
        if uses_estimator {
            put("estimator.kappa", format!("{:?}", self.estimator.kappa));
            put("estimator.level", format!("{:?}", self.estimator.level));
            for (section, spec) in [
                ("bridge_basis", &self.estimator.bridge_basis),
                ("instrument_basis", &self.estimator.instrument_basis),
            ] {
                let family = match spec.family {
                    Family::Auto => "auto",
                    Family::Polynomial => "polynomial",
                    Family::Bspline => "bspline",
                    Family::Indicator => "indicator",
                };
                put(&format!("{section}.family"), family.into());
                let degree = if spec.degree.is_empty() {
                    "auto".to_string()
                } else {
                    spec.degree
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                put(&format!("{section}.degree"), degree);
                put(
                    &format!("{section}.knots"),
                    spec.interior_knots.map_or("auto".into(), |k| k.to_string()),
                );
                put(&format!("{section}.per_arm"), spec.per_arm.to_string());
                put(
                    &format!("{section}.count"),
                    spec.count.map_or("all".into(), |k| k.to_string()),
                );
            }
        }
        if uses_dgp {
            match &self.dgp {
                DgpChoice::Preset(name) => {
                    put("dgp.kind", "preset".into());
                    put("dgp.preset", name.clone());
                }
                DgpChoice::Joint(p) => {
                    put("dgp.kind", "joint".into());
                    put("dgp.joint", p.display().to_string());
                }
                DgpChoice::LinearGaussian(s) => {
                    put("dgp.kind", "linear_gaussian".into());
                    let v = serde_json::to_value(s).expect("plain struct");
                    for k in LINEAR_KEYS {
                        put(
                            &format!("dgp.{k}"),
                            format!("{:?}", v[k].as_f64().unwrap_or(f64::NAN)),
                        );
                    }
                }
            }
        }
        if let Some(n) = self.dgp_n {
            put("dgp.n", n.to_string());
        }
        if self.command == Command::Mc {
            put(
                "mc.n_ladder",
                self.n_ladder
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            put("mc.replications", self.replications.to_string());
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::from_ini_str(text).unwrap()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::resolve_with_env(Command::Mc, &raw(""), None).unwrap();
        assert_eq!(cfg.estimator, EstimatorConfig::default());
        assert_eq!(cfg.n_ladder, vec![500, 2000, 8000]);
        assert_eq!(cfg.replications, 100);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.dgp, DgpChoice::Preset("nonunique".into()));
        let echo = cfg.echo();
        assert_eq!(echo["estimator.kappa"], "1.0");
        assert_eq!(echo["bridge_basis.family"], "auto");
        assert!(!echo.contains_key("run.out"));
    }

    #[test]
    fn negative_kappa_names_kappa() {
        let err = RunConfig::resolve_with_env(Command::Mc, &raw("[estimator]\nkappa = -1\n"), None)
            .unwrap_err();
        assert!(format!("{err:#}").contains("kappa"), "{err:#}");
    }

    #[test]
    fn flag_override_wins() {
        let mut r = raw("[estimator]\nlevel = 0.95\n");
        r.set("estimator.level", "0.9");
        let cfg = RunConfig::resolve_with_env(Command::Mc, &r, None).unwrap();
        assert_eq!(cfg.estimator.level, 0.9);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::resolve_with_env(Command::Mc, &raw("[estimator]\nkapa = 1\n"), None)
            .unwrap_err();
        assert!(err.to_string().contains("estimator.kapa"));
        let err =
            RunConfig::resolve_with_env(Command::Mc, &raw("[bridge_basis]\norder = 2\n"), None)
                .unwrap_err();
        assert!(err.to_string().contains("bridge_basis.order"));
    }

    #[test]
    fn missing_required_key() {
        let err = RunConfig::resolve_with_env(Command::Estimate, &raw(""), None).unwrap_err();
        assert!(err.to_string().contains("data.path"));
        let err = RunConfig::resolve_with_env(Command::Simulate, &raw(""), None).unwrap_err();
        assert!(err.to_string().contains("dgp.n"));
    }

    #[test]
    fn out_of_range_values() {
        for text in [
            "[estimator]\nlevel = 1.2\n",
            "[mc]\nreplications = 1\n",
            "[mc]\nn_ladder = 500, 200\n",
            "[bridge_basis]\ndegree = 0\n",
            "[dgp]\nkind = linear_gaussian\na_u = 5\n",
            "[dgp]\nkind = spline\n",
        ] {
            assert!(
                RunConfig::resolve_with_env(Command::Mc, &raw(text), None).is_err(),
                "{text}"
            );
        }
        assert!(RawConfig::from_ini_str("[estimator\nkappa = 1").is_err());
    }

    #[test]
    fn seed_precedence() {
        let env = Some("77".to_string());
        assert_eq!(
            RunConfig::resolve_with_env(Command::Mc, &raw(""), env.clone())
                .unwrap()
                .seed,
            77
        );
        assert_eq!(
            RunConfig::resolve_with_env(Command::Mc, &raw("[run]\nseed = 5\n"), env)
                .unwrap()
                .seed,
            5
        );
        assert!(RunConfig::resolve_with_env(Command::Mc, &raw(""), Some("x".into())).is_err());
    }

    #[test]
    fn basis_and_linear_sections() {
        let cfg = RunConfig::resolve_with_env(
            Command::Mc,
            &raw("[bridge_basis]\nfamily = bspline\ndegree = 3\nknots = 2\nper_arm = false\n[dgp]\nkind = linear_gaussian\nconfounding = false\ny_a = 0.5\n"),
            None,
        )
        .unwrap();
        let b = &cfg.estimator.bridge_basis;
        assert_eq!(
            (b.family, b.degree.clone(), b.interior_knots, b.per_arm),
            (Family::Bspline, vec![3], Some(2), false)
        );
        match &cfg.dgp {
            DgpChoice::LinearGaussian(s) => {
                assert_eq!((s.a_u, s.y_u, s.w_u, s.y_a), (0.0, 0.0, 1.0, 0.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.echo()["dgp.y_a"], "0.5");
    }

    #[test]
    fn override_syntax() {
        let mut r = RawConfig::default();
        r.apply_override("mc.replications = 7").unwrap();
        assert_eq!(r.values["mc.replications"], "7");
        assert!(r.apply_override("mc.replications").is_err());
    }
}
