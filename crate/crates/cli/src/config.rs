//! Flat `key = value` run configuration.
//!
//! Sources are layered: preset first, then the file's keys, then `--set`
//! overrides. `#` starts a comment. Every error names the line (or preset
//! line / override) it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use meritfed::aggregators::{AngleSmoothing, SimilarityMeasure};
use meritfed::{
    AlieSign, AttackSpec, DeltaEstimator, Estimator, ExperimentSpec, GradientOracle, MdConfig,
    MethodConfig, MethodKind, TaskSpec, ValidationMode,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Mean,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    Bf,
    Rn,
    Ipm,
    Alie,
}

/// A fully expanded, validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub task: TaskKind,
    pub dim: usize,
    pub mu: f64,
    pub features: usize,
    pub classes: usize,
    pub alpha: f64,
    pub clients: usize,
    pub groups: [usize; 3],
    pub byzantine: usize,
    pub attack: AttackKind,
    pub attack_sigma: f64,
    pub attack_eps: f64,
    pub attack_z: f64,
    pub attack_sign: AlieSign,
    pub shard_size: usize,
    pub batch_size: usize,
    pub gradient_oracle: GradientOracle,
    pub validation: ValidationMode,
    pub validation_size: usize,
    pub gamma: f64,
    pub rounds: usize,
    pub x0: Option<f64>,
    pub methods: Vec<String>,
    pub md_lr: f64,
    pub md_steps: usize,
    pub md_minibatch: usize,
    pub md_warm_start: bool,
    pub zo_smoothing: f64,
    pub fedadp_alpha: f64,
    pub fedadp_smoothing: AngleSmoothing,
    /// TAWT step; the MD step size when unset.
    pub tawt_eta: Option<f64>,
    pub tawt_c: f64,
    pub tawt_measure: SimilarityMeasure,
    pub delta_estimator: DeltaEstimator,
    pub seed: u64,
    pub repeats: usize,
    pub out: Option<String>,
}

/// Keys that must come from somewhere (preset, file or override).
pub const REQUIRED_KEYS: &[&str] =
    &["task", "clients", "groups", "shard_size", "batch_size", "gamma", "rounds", "methods"];

const TASK_KEYS_MEAN: &[&str] = &["dim", "mu"];
const TASK_KEYS_SOFTMAX: &[&str] = &["features", "classes", "alpha"];

pub const KNOWN_KEYS: &[&str] = &[
    "preset",
    "task",
    "dim",
    "mu",
    "features",
    "classes",
    "alpha",
    "clients",
    "groups",
    "byzantine",
    "attack",
    "attack_sigma",
    "attack_eps",
    "attack_z",
    "attack_sign",
    "shard_size",
    "batch_size",
    "gradient_oracle",
    "validation",
    "validation_size",
    "gamma",
    "rounds",
    "x0",
    "methods",
    "md_lr",
    "md_steps",
    "md_minibatch",
    "md_warm_start",
    "zo_smoothing",
    "fedadp_alpha",
    "fedadp_smoothing",
    "tawt_eta",
    "tawt_c",
    "tawt_measure",
    "delta_estimator",
    "seed",
    "repeats",
    "out",
];

const MEAN_BASE: &str = "\
task = mean
dim = 10
clients = 150
groups = 5, 95, 50
shard_size = 1000
batch_size = 100
validation_size = 1000
gamma = 0.01
rounds = 2000
methods = sgd-full, sgd-ideal, meritfed-md
md_steps = 50
";

const BYZANTINE_BASE: &str = "\
task = mean
dim = 10
mu = 0
clients = 55
groups = 5, 0, 0
byzantine = 50
shard_size = 1000
batch_size = 100
validation_size = 1000
gamma = 0.01
rounds = 1000
methods = sgd-full, sgd-ideal, meritfed-md
md_lr = 3.5
md_steps = 10
";

const SOFTMAX_BASE: &str = "\
task = softmax
features = 10
classes = 10
clients = 20
groups = 1, 10, 9
shard_size = 500
batch_size = 75
validation_size = 500
gamma = 0.1
rounds = 500
methods = sgd-full, sgd-ideal, meritfed-smd
md_lr = 0.1
md_steps = 10
md_minibatch = 90
";

/// Named presets: a shared base plus the distinguishing keys.
pub const PRESETS: &[(&str, &str, &str)] = &[
    ("mean-mu-0.001", MEAN_BASE, "mu = 0.001\nmd_lr = 3.5\n"),
    ("mean-mu-0.01", MEAN_BASE, "mu = 0.01\nmd_lr = 4.5\n"),
    ("mean-mu-0.1", MEAN_BASE, "mu = 0.1\nmd_lr = 12.5\n"),
    ("byzantine-bf", BYZANTINE_BASE, "attack = bf\n"),
    ("byzantine-rn", BYZANTINE_BASE, "attack = rn\nattack_sigma = 1\n"),
    ("byzantine-ipm", BYZANTINE_BASE, "attack = ipm\nattack_eps = 0.1\n"),
    ("byzantine-alie", BYZANTINE_BASE, "attack = alie\nattack_z = 100\n"),
    ("softmax-alpha-0.5", SOFTMAX_BASE, "alpha = 0.5\n"),
    ("softmax-alpha-0.7", SOFTMAX_BASE, "alpha = 0.7\n"),
    ("softmax-alpha-0.9", SOFTMAX_BASE, "alpha = 0.9\n"),
    ("softmax-alpha-0.99", SOFTMAX_BASE, "alpha = 0.99\n"),
    (
        "theorem-honest",
        MEAN_BASE,
        "mu = 0.1\nmd_lr = 12.5\ngradient_oracle = fresh\nvalidation = population\n\
         delta_estimator = reference\n",
    ),
    (
        "theorem-exact",
        MEAN_BASE,
        "mu = 0.1\nclients = 5\ngroups = 5, 0, 0\ngradient_oracle = exact\n\
         validation = population\nmethods = sgd-ideal\ndelta_estimator = reference\n",
    ),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _, _)| *name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Origin {
    Preset(String, usize),
    Line(usize),
    Set(usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Preset(name, line) => write!(f, "preset `{name}` line {line}"),
            Origin::Line(line) => write!(f, "line {line}"),
            Origin::Set(i) => write!(f, "--set #{}", i + 1),
            Origin::Flag => f.write_str("--preset"),
        }
    }
}

type Entries = BTreeMap<String, (String, Origin)>;

/// Splits text into `(line, key, value)` triples.
fn lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(format!("line {line}: expected `key = value`"));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return err(format!("line {line}: unknown key `{key}`"));
        }
        out.push((line, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn preset_entries(name: &str, entries: &mut Entries) -> Result<(), ConfigError> {
    let Some((_, base, extra)) = PRESETS.iter().find(|(n, _, _)| *n == name) else {
        let known: Vec<_> = preset_names().collect();
        return err(format!("unknown preset `{name}` (known: {})", known.join(", ")));
    };
    let text = format!("{base}{extra}");
    for (line, key, value) in lines(&text)? {
        entries.insert(key, (value, Origin::Preset(name.to_string(), line)));
    }
    Ok(())
}

/// Parses configuration text with no preset or override from the caller.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, None, &[])
}

/// Parses `text`, layering an optional preset (overriding any `preset` key
/// in the file) below it and `key=value` overrides above it.
pub fn parse_config_with(
    text: &str,
    preset: Option<&str>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let file = lines(text)?;
    let mut file_entries = Entries::new();
    for (line, key, value) in file {
        if let Some((_, prev)) = file_entries.get(&key) {
            return err(format!("line {line}: duplicate key `{key}` (first set on {prev})"));
        }
        file_entries.insert(key, (value, Origin::Line(line)));
    }
    let mut set_entries = Entries::new();
    for (i, item) in overrides.iter().enumerate() {
        let Some((key, value)) = item.split_once('=') else {
            return err(format!("--set #{}: expected `key=value`, got `{item}`", i + 1));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return err(format!("--set #{}: unknown key `{key}`", i + 1));
        }
        set_entries.insert(key.to_string(), (value.trim().to_string(), Origin::Set(i)));
    }

    let preset_name = match preset {
        Some(p) => Some(p.to_string()),
        None => set_entries
            .get("preset")
            .or_else(|| file_entries.get("preset"))
            .map(|(v, _)| v.clone()),
    };
    let mut entries = Entries::new();
    if let Some(name) = &preset_name {
        preset_entries(name, &mut entries)?;
    }
    entries.extend(file_entries);
    entries.extend(set_entries);
    match &preset_name {
        Some(name) => {
            entries.insert("preset".into(), (name.clone(), Origin::Flag));
        }
        None => {
            entries.remove("preset");
        }
    }
    build(&entries)
}

struct Fields<'a> {
    entries: &'a Entries,
}

impl Fields<'_> {
    fn raw(&self, key: &str) -> Option<&(String, Origin)> {
        self.entries.get(key)
    }

    fn parse_with<T>(
        &self,
        key: &str,
        what: &str,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((value, origin)) => match f(value) {
                Some(v) => Ok(Some(v)),
                None => err(format!("{origin}: `{key}` expects {what}, got `{value}`")),
            },
        }
    }

    fn num<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        self.parse_with(key, what, |v| v.parse().ok())
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<Option<T>, ConfigError> {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        self.parse_with(key, &format!("one of {}", names.join("|")), |v| {
            options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t)
        })
    }

    fn origin(&self, key: &str) -> String {
        self.raw(key).map_or_else(|| "defaults".to_string(), |(_, o)| o.to_string())
    }
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// Method names accepted in `methods`.
pub fn method_name_valid(name: &str) -> bool {
    matches!(
        name,
        "sgd-full" | "sgd-ideal" | "meritfed-md" | "meritfed-smd" | "meritfed-zo" | "fedadp" | "tawt"
    ) || name
        .strip_prefix("fedavg-")
        .is_some_and(|k| k.parse::<usize>().is_ok_and(|k| k > 0))
}

fn build(entries: &Entries) -> Result<RunConfig, ConfigError> {
    let f = Fields { entries };
    let task = f.choice("task", &[("mean", TaskKind::Mean), ("softmax", TaskKind::Softmax)])?;
    let mut missing: Vec<&str> =
        REQUIRED_KEYS.iter().copied().filter(|k| f.raw(k).is_none()).collect();
    let task_keys = match task {
        Some(TaskKind::Mean) => TASK_KEYS_MEAN,
        Some(TaskKind::Softmax) => TASK_KEYS_SOFTMAX,
        None => &[],
    };
    missing.extend(task_keys.iter().copied().filter(|k| f.raw(k).is_none()));
    if !missing.is_empty() {
        return err(format!("missing required keys: {}", missing.join(", ")));
    }

    let groups = f
        .parse_with("groups", "three comma-separated counts", |v| {
            let parts: Vec<usize> = v.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
            <[usize; 3]>::try_from(parts).ok()
        })?
        .expect("required");
    let methods = f
        .parse_with("methods", "a comma-separated method list", |v| Some(parse_list(v)))?
        .expect("required");
    if methods.is_empty() {
        return err(format!("{}: `methods` is empty", f.origin("methods")));
    }
    if let Some(bad) = methods.iter().find(|m| !method_name_valid(m)) {
        return err(format!(
            "{}: unknown method `{bad}` (known: sgd-full, sgd-ideal, meritfed-md, meritfed-smd, \
             meritfed-zo, fedadp, tawt, fedavg-<K>)",
            f.origin("methods")
        ));
    }

    let cfg = RunConfig {
        preset: f.raw("preset").map(|(v, _)| v.clone()),
        task: task.expect("required"),
        dim: f.num("dim", "a non-negative integer")?.unwrap_or(10),
        mu: f.float("mu")?.unwrap_or(0.0),
        features: f.num("features", "a non-negative integer")?.unwrap_or(10),
        classes: f.num("classes", "a non-negative integer")?.unwrap_or(10),
        alpha: f.float("alpha")?.unwrap_or(1.0),
        clients: f.num("clients", "a non-negative integer")?.expect("required"),
        groups,
        byzantine: f.num("byzantine", "a non-negative integer")?.unwrap_or(0),
        attack: f
            .choice(
                "attack",
                &[
                    ("none", AttackKind::None),
                    ("bf", AttackKind::Bf),
                    ("rn", AttackKind::Rn),
                    ("ipm", AttackKind::Ipm),
                    ("alie", AttackKind::Alie),
                ],
            )?
            .unwrap_or(AttackKind::None),
        attack_sigma: f.float("attack_sigma")?.unwrap_or(1.0),
        attack_eps: f.float("attack_eps")?.unwrap_or(0.1),
        attack_z: f.float("attack_z")?.unwrap_or(100.0),
        attack_sign: f
            .choice("attack_sign", &[("minus", AlieSign::Minus), ("plus", AlieSign::Plus)])?
            .unwrap_or(AlieSign::Minus),
        shard_size: f.num("shard_size", "a non-negative integer")?.expect("required"),
        batch_size: f.num("batch_size", "a non-negative integer")?.expect("required"),
        gradient_oracle: f
            .choice(
                "gradient_oracle",
                &[
                    ("shard", GradientOracle::Shard),
                    ("fresh", GradientOracle::Fresh),
                    ("exact", GradientOracle::Exact),
                ],
            )?
            .unwrap_or(GradientOracle::Shard),
        validation: f
            .choice(
                "validation",
                &[
                    ("extra-validation", ValidationMode::ExtraValidation),
                    ("reuse-train", ValidationMode::ReuseTrain),
                    ("population", ValidationMode::Population),
                ],
            )?
            .unwrap_or(ValidationMode::ExtraValidation),
        validation_size: f.num("validation_size", "a non-negative integer")?.unwrap_or(1000),
        gamma: f.float("gamma")?.expect("required"),
        rounds: f.num("rounds", "a non-negative integer")?.expect("required"),
        x0: match f.raw("x0") {
            Some((v, _)) if v == "default" => None,
            _ => f.float("x0")?,
        },
        methods,
        md_lr: f.float("md_lr")?.unwrap_or(1.0),
        md_steps: f.num("md_steps", "a non-negative integer")?.unwrap_or(50),
        md_minibatch: f.num("md_minibatch", "a non-negative integer")?.unwrap_or(100),
        md_warm_start: f.choice("md_warm_start", &[("true", true), ("false", false)])?.unwrap_or(true),
        zo_smoothing: f.float("zo_smoothing")?.unwrap_or(1e-4),
        fedadp_alpha: f.float("fedadp_alpha")?.unwrap_or(5.0),
        fedadp_smoothing: f
            .choice(
                "fedadp_smoothing",
                &[("running-mean", AngleSmoothing::RunningMean), ("none", AngleSmoothing::None)],
            )?
            .unwrap_or(AngleSmoothing::RunningMean),
        tawt_eta: match f.raw("tawt_eta") {
            Some((v, _)) if v == "default" => None,
            _ => f.float("tawt_eta")?,
        },
        tawt_c: f.float("tawt_c")?.unwrap_or(1.0),
        tawt_measure: f
            .choice(
                "tawt_measure",
                &[("cosine", SimilarityMeasure::Cosine), ("angle", SimilarityMeasure::Angle)],
            )?
            .unwrap_or(SimilarityMeasure::Cosine),
        delta_estimator: f
            .choice(
                "delta_estimator",
                &[
                    ("auto", DeltaEstimator::Auto),
                    ("reference", DeltaEstimator::Reference),
                    ("grid", DeltaEstimator::Grid),
                    ("best-iterate", DeltaEstimator::BestIterate),
                ],
            )?
            .unwrap_or(DeltaEstimator::Auto),
        seed: f.num("seed", "a non-negative integer")?.unwrap_or(0),
        repeats: f.num("repeats", "a non-negative integer")?.unwrap_or(3),
        out: f.raw("out").map(|(v, _)| v.clone()),
    };

    let total = cfg.groups.iter().sum::<usize>().checked_add(cfg.byzantine);
    if total != Some(cfg.clients) {
        return err(format!(
            "{}: role counts (groups {:?} + {} byzantine) do not sum to clients = {}",
            f.origin("clients"),
            cfg.groups,
            cfg.byzantine,
            cfg.clients
        ));
    }
    if cfg.byzantine > 0 && cfg.attack == AttackKind::None {
        return err(format!("{}: byzantine clients need an attack", f.origin("byzantine")));
    }
    if cfg.repeats == 0 {
        return err(format!("{}: `repeats` must be >= 1", f.origin("repeats")));
    }
    cfg.experiment_spec(cfg.seed).map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn attack_spec(&self) -> Option<AttackSpec> {
        match self.attack {
            AttackKind::None => None,
            AttackKind::Bf => Some(AttackSpec::BitFlip),
            AttackKind::Rn => Some(AttackSpec::RandomNoise { sigma: self.attack_sigma }),
            AttackKind::Ipm => Some(AttackSpec::Ipm { eps: self.attack_eps }),
            AttackKind::Alie => Some(AttackSpec::Alie { z: self.attack_z, sign: self.attack_sign }),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    fn method(&self, name: &str) -> MethodConfig {
        let md = |estimator, minibatch| MdConfig {
            step_size: self.md_lr,
            steps: self.md_steps,
            estimator,
            smoothing: self.zo_smoothing,
            minibatch,
            warm_start: self.md_warm_start,
        };
        let kind = match name {
            "sgd-full" => MethodKind::SgdFull,
            "sgd-ideal" => MethodKind::SgdIdeal { members: (0..self.groups[0]).collect() },
            "meritfed-md" => MethodKind::MeritFed(md(Estimator::ExactChainRule, 0)),
            "meritfed-smd" => MethodKind::MeritFed(md(Estimator::ExactChainRule, self.md_minibatch)),
            "meritfed-zo" => MethodKind::MeritFed(md(Estimator::ZerothOrder, 0)),
            "fedadp" => MethodKind::FedAdp { alpha: self.fedadp_alpha, smoothing: self.fedadp_smoothing },
            "tawt" => MethodKind::Tawt {
                eta: self.tawt_eta.unwrap_or(self.md_lr),
                c: self.tawt_c,
                measure: self.tawt_measure,
            },
            other => {
                let k = other
                    .strip_prefix("fedavg-")
                    .and_then(|k| k.parse().ok())
                    .expect("method names are validated at parse time");
                MethodKind::FedAvgSampled { k }
            }
        };
        MethodConfig { name: name.to_string(), kind, gamma: self.gamma }
    }

    pub fn experiment_spec(&self, seed: u64) -> meritfed::Result<ExperimentSpec> {
        let task = match self.task {
            TaskKind::Mean => TaskSpec::Mean { dim: self.dim, mu: self.mu },
            TaskKind::Softmax => TaskSpec::Softmax {
                features: self.features,
                classes: self.classes,
                alpha: self.alpha,
            },
        };
        let spec = ExperimentSpec {
            task,
            groups: self.groups,
            byzantine: self.byzantine,
            attack: self.attack_spec(),
            shard_size: self.shard_size,
            batch_size: self.batch_size,
            gradient_oracle: self.gradient_oracle,
            validation: self.validation,
            validation_size: self.validation_size,
            gamma: self.gamma,
            rounds: self.rounds,
            x0: self.x0,
            methods: self.methods.iter().map(|m| self.method(m)).collect(),
            delta_estimator: self.delta_estimator,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn name_of<T: PartialEq>(value: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, v)| *v == value).map(|(n, _)| *n).expect("exhaustive table")
}

/// Writes every key explicitly; `parse_config(&emit(c)) == c`.
pub fn emit(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    if let Some(p) = &cfg.preset {
        kv("preset", p.clone());
    }
    kv("task", name_of(cfg.task, &[("mean", TaskKind::Mean), ("softmax", TaskKind::Softmax)]).into());
    kv("dim", cfg.dim.to_string());
    kv("mu", format!("{:?}", cfg.mu));
    kv("features", cfg.features.to_string());
    kv("classes", cfg.classes.to_string());
    kv("alpha", format!("{:?}", cfg.alpha));
    kv("clients", cfg.clients.to_string());
    kv("groups", format!("{}, {}, {}", cfg.groups[0], cfg.groups[1], cfg.groups[2]));
    kv("byzantine", cfg.byzantine.to_string());
    kv(
        "attack",
        name_of(
            cfg.attack,
            &[
                ("none", AttackKind::None),
                ("bf", AttackKind::Bf),
                ("rn", AttackKind::Rn),
                ("ipm", AttackKind::Ipm),
                ("alie", AttackKind::Alie),
            ],
        )
        .into(),
    );
    kv("attack_sigma", format!("{:?}", cfg.attack_sigma));
    kv("attack_eps", format!("{:?}", cfg.attack_eps));
    kv("attack_z", format!("{:?}", cfg.attack_z));
    kv(
        "attack_sign",
        name_of(cfg.attack_sign, &[("minus", AlieSign::Minus), ("plus", AlieSign::Plus)]).into(),
    );
    kv("shard_size", cfg.shard_size.to_string());
    kv("batch_size", cfg.batch_size.to_string());
    kv(
        "gradient_oracle",
        name_of(
            cfg.gradient_oracle,
            &[
                ("shard", GradientOracle::Shard),
                ("fresh", GradientOracle::Fresh),
                ("exact", GradientOracle::Exact),
            ],
        )
        .into(),
    );
    kv(
        "validation",
        name_of(
            cfg.validation,
            &[
                ("extra-validation", ValidationMode::ExtraValidation),
                ("reuse-train", ValidationMode::ReuseTrain),
                ("population", ValidationMode::Population),
            ],
        )
        .into(),
    );
    kv("validation_size", cfg.validation_size.to_string());
    kv("gamma", format!("{:?}", cfg.gamma));
    kv("rounds", cfg.rounds.to_string());
    kv("x0", cfg.x0.map_or_else(|| "default".into(), |v| format!("{v:?}")));
    kv("methods", cfg.methods.join(", "));
    kv("md_lr", format!("{:?}", cfg.md_lr));
    kv("md_steps", cfg.md_steps.to_string());
    kv("md_minibatch", cfg.md_minibatch.to_string());
    kv("md_warm_start", cfg.md_warm_start.to_string());
    kv("zo_smoothing", format!("{:?}", cfg.zo_smoothing));
    kv("fedadp_alpha", format!("{:?}", cfg.fedadp_alpha));
    kv(
        "fedadp_smoothing",
        name_of(
            cfg.fedadp_smoothing,
            &[("running-mean", AngleSmoothing::RunningMean), ("none", AngleSmoothing::None)],
        )
        .into(),
    );
    kv("tawt_eta", cfg.tawt_eta.map_or_else(|| "default".into(), |v| format!("{v:?}")));
    kv("tawt_c", format!("{:?}", cfg.tawt_c));
    kv(
        "tawt_measure",
        name_of(
            cfg.tawt_measure,
            &[("cosine", SimilarityMeasure::Cosine), ("angle", SimilarityMeasure::Angle)],
        )
        .into(),
    );
    kv("delta_estimator", cfg.delta_estimator.name().into());
    kv("seed", cfg.seed.to_string());
    kv("repeats", cfg.repeats.to_string());
    if let Some(o) = &cfg.out {
        kv("out", o.clone());
    }
    out
}
