//! Run configuration in a flat `key = value` text format.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Omitted keys take the defaults of [`RunConfig::default`]. `Display` writes
//! the fully resolved configuration in the same format, so it parses back to
//! an equal value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::data::{gen_blobs_split, gen_two_moons_split, load_embeddings_csv, BlobParams, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, MixupKind, ObjectiveSettings, ScheduleKind};
use crate::pairing::MixConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        params: BlobParams,
        test_per_class: usize,
    },
    Moons {
        n_per_class: usize,
        test_per_class: usize,
        noise: f64,
    },
    Csv {
        train: PathBuf,
        /// Falls back to the training file when absent.
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub eta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub lambda_n: f64,
    pub lambda_p: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Seed for synthetic data; follows `seed` when unset.
    pub data_seed: Option<u64>,
    pub encoder_widths: Vec<usize>,
    pub d_z: usize,
    /// Projection hidden width; equals `d_z` when unset.
    pub proj_hidden: Option<usize>,
    pub proj_dim: usize,
    pub activation: Activation,
    pub use_contrastive: bool,
    pub use_focal: bool,
    pub use_generation: bool,
    pub use_mixed_ce: bool,
    pub mixup: MixupKind,
    pub dataset: DatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            alpha: 1.0,
            tau: 0.07,
            lambda_n: 0.8,
            lambda_p: 0.0,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: ScheduleKind::Cosine,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            data_seed: None,
            encoder_widths: vec![32],
            d_z: 16,
            proj_hidden: None,
            proj_dim: 32,
            activation: Activation::Tanh,
            use_contrastive: true,
            use_focal: true,
            use_generation: true,
            use_mixed_ce: true,
            mixup: MixupKind::Hard,
            dataset: DatasetSpec::Blobs {
                params: BlobParams {
                    classes: 3,
                    n_per_class: 30,
                    separation: 3.0,
                    noise: 1.0,
                    dim: 8,
                },
                test_per_class: 30,
            },
        }
    }
}

const KEYS: &[&str] = &[
    "eta",
    "alpha",
    "tau",
    "lambda_n",
    "lambda_p",
    "lr",
    "momentum",
    "weight_decay",
    "schedule",
    "epochs",
    "batch_size",
    "seed",
    "data_seed",
    "encoder_widths",
    "d_z",
    "proj_hidden",
    "proj_dim",
    "activation",
    "use_contrastive",
    "use_focal",
    "use_generation",
    "use_mixed_ce",
    "mixup",
    "dataset",
    "blobs_classes",
    "blobs_per_class",
    "blobs_separation",
    "blobs_noise",
    "blobs_dim",
    "test_per_class",
    "moons_per_class",
    "moons_noise",
    "train_csv",
    "test_csv",
];

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{raw}`"))),
        }
    }

    fn set<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

fn parse_choice<T: Copy>(key: &str, raw: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(key, format!("`{raw}` is not one of {}", names.join(", ")))
        })
}

const SCHEDULES: &[(&str, ScheduleKind)] = &[
    ("cosine", ScheduleKind::Cosine),
    ("linear", ScheduleKind::Linear),
    ("constant", ScheduleKind::Constant),
];
const ACTIVATIONS: &[(&str, Activation)] = &[("tanh", Activation::Tanh), ("relu", Activation::Relu)];
const MIXUPS: &[(&str, MixupKind)] = &[("hard", MixupKind::Hard), ("random", MixupKind::Random)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).unwrap_or("?")
}

impl RunConfig {
    /// Parses config text; relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, format!("line {}: unknown key", i + 1)));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(key, format!("line {}: assigned twice", i + 1)));
            }
        }
        let mut f = Fields(map);
        let mut c = RunConfig::default();

        f.set("eta", &mut c.eta)?;
        f.set("alpha", &mut c.alpha)?;
        f.set("tau", &mut c.tau)?;
        f.set("lambda_n", &mut c.lambda_n)?;
        f.set("lambda_p", &mut c.lambda_p)?;
        f.set("lr", &mut c.lr)?;
        f.set("momentum", &mut c.momentum)?;
        f.set("weight_decay", &mut c.weight_decay)?;
        if let Some(raw) = f.raw("schedule") {
            c.schedule = parse_choice("schedule", &raw, SCHEDULES)?;
        }
        f.set("epochs", &mut c.epochs)?;
        f.set("batch_size", &mut c.batch_size)?;
        f.set("seed", &mut c.seed)?;
        c.data_seed = f.take("data_seed")?;
        if let Some(raw) = f.raw("encoder_widths") {
            c.encoder_widths = if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::config("encoder_widths", format!("cannot parse `{raw}`")))?
            };
        }
        f.set("d_z", &mut c.d_z)?;
        c.proj_hidden = f.take("proj_hidden")?;
        f.set("proj_dim", &mut c.proj_dim)?;
        if let Some(raw) = f.raw("activation") {
            c.activation = parse_choice("activation", &raw, ACTIVATIONS)?;
        }
        f.set("use_contrastive", &mut c.use_contrastive)?;
        f.set("use_focal", &mut c.use_focal)?;
        f.set("use_generation", &mut c.use_generation)?;
        f.set("use_mixed_ce", &mut c.use_mixed_ce)?;
        if let Some(raw) = f.raw("mixup") {
            c.mixup = parse_choice("mixup", &raw, MIXUPS)?;
        }

        let kind = f.raw("dataset").unwrap_or_else(|| "blobs".into());
        c.dataset = match kind.as_str() {
            "blobs" => {
                let DatasetSpec::Blobs {
                    mut params,
                    mut test_per_class,
                } = RunConfig::default().dataset
                else {
                    unreachable!()
                };
                f.set("blobs_classes", &mut params.classes)?;
                f.set("blobs_per_class", &mut params.n_per_class)?;
                f.set("blobs_separation", &mut params.separation)?;
                f.set("blobs_noise", &mut params.noise)?;
                f.set("blobs_dim", &mut params.dim)?;
                f.set("test_per_class", &mut test_per_class)?;
                DatasetSpec::Blobs { params, test_per_class }
            }
            "moons" => {
                let mut n_per_class = 100;
                let mut test_per_class = 100;
                let mut noise = 0.1;
                f.set("moons_per_class", &mut n_per_class)?;
                f.set("test_per_class", &mut test_per_class)?;
                f.set("moons_noise", &mut noise)?;
                DatasetSpec::Moons {
                    n_per_class,
                    test_per_class,
                    noise,
                }
            }
            "csv" => {
                let resolve = |p: String| match base_dir {
                    Some(dir) if Path::new(&p).is_relative() => dir.join(p),
                    _ => PathBuf::from(p),
                };
                let train = f
                    .raw("train_csv")
                    .ok_or_else(|| Error::config("train_csv", "required when dataset = csv"))?;
                DatasetSpec::Csv {
                    train: resolve(train),
                    test: f.raw("test_csv").map(resolve),
                }
            }
            other => return Err(Error::config("dataset", format!("`{other}` is not one of blobs, moons, csv"))),
        };
        if let Some(key) = f.0.keys().next() {
            return Err(Error::config(key, format!("not used by dataset = {kind}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(self.tau > 0.0 && self.tau.is_finite(), "tau", "must be > 0")?;
        check((0.0..=1.0).contains(&self.lambda_n), "lambda_n", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.lambda_p), "lambda_p", "must lie in [0, 1]")?;
        check(self.eta >= 0.0 && self.eta.is_finite(), "eta", "must be >= 0")?;
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha", "must be > 0")?;
        check(self.lr >= 0.0 && self.lr.is_finite(), "lr", "must be >= 0")?;
        check(self.momentum >= 0.0 && self.momentum.is_finite(), "momentum", "must be >= 0")?;
        check(self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay", "must be >= 0")?;
        check(self.epochs >= 1, "epochs", "must be >= 1")?;
        check(self.batch_size >= 2, "batch_size", "must be >= 2")?;
        check(self.d_z >= 1, "d_z", "must be >= 1")?;
        check(self.proj_dim >= 1, "proj_dim", "must be >= 1")?;
        check(self.proj_hidden != Some(0), "proj_hidden", "must be >= 1")?;
        check(!self.encoder_widths.contains(&0), "encoder_widths", "widths must be >= 1")?;
        match &self.dataset {
            DatasetSpec::Blobs { params, test_per_class } => {
                check(params.classes >= 2, "blobs_classes", "must be >= 2")?;
                check(params.n_per_class >= 1, "blobs_per_class", "must be >= 1")?;
                check(params.separation >= 0.0, "blobs_separation", "must be >= 0")?;
                check(params.noise > 0.0, "blobs_noise", "must be > 0")?;
                check(params.dim >= 1, "blobs_dim", "must be >= 1")?;
                check(*test_per_class >= 1, "test_per_class", "must be >= 1")?;
            }
            DatasetSpec::Moons {
                n_per_class,
                test_per_class,
                noise,
            } => {
                check(*n_per_class >= 1, "moons_per_class", "must be >= 1")?;
                check(*test_per_class >= 1, "test_per_class", "must be >= 1")?;
                check(*noise >= 0.0, "moons_noise", "must be >= 0")?;
            }
            DatasetSpec::Csv { .. } => {}
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Train and test splits with a shared class count.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        let seed = self.data_seed();
        match &self.dataset {
            DatasetSpec::Blobs { params, test_per_class } => gen_blobs_split(params, *test_per_class, seed),
            DatasetSpec::Moons {
                n_per_class,
                test_per_class,
                noise,
            } => gen_two_moons_split(*n_per_class, *test_per_class, *noise, seed),
            DatasetSpec::Csv { train, test } => {
                let tr = load_embeddings_csv(train)?;
                let te = match test {
                    Some(p) => load_embeddings_csv(p)?,
                    None => tr.clone(),
                };
                if tr.dim() != te.dim() {
                    return Err(Error::Shape(format!(
                        "train features have {} columns, test features {}",
                        tr.dim(),
                        te.dim()
                    )));
                }
                let k = tr.class_count().max(te.class_count());
                Ok((tr.with_class_count(k)?, te.with_class_count(k)?.with_split(Split::Test)))
            }
        }
    }

    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        Architecture {
            input_dim,
            encoder_widths: self.encoder_widths.clone(),
            feature_dim: self.d_z,
            classes,
            proj_hidden: self.proj_hidden.unwrap_or(self.d_z),
            proj_dim: self.proj_dim,
            activation: self.activation,
        }
    }

    pub fn objective_settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            tau: self.tau,
            eta: self.eta,
            mix: MixConfig {
                alpha: self.alpha,
                lambda_n: self.lambda_n,
                lambda_p: self.lambda_p,
            },
            mixup: self.mixup,
            use_contrastive: self.use_contrastive,
            use_focal: self.use_focal,
            use_generation: self.use_generation,
            use_mixed_ce: self.use_mixed_ce,
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eta = {}", self.eta)?;
        writeln!(f, "alpha = {}", self.alpha)?;
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "lambda_n = {}", self.lambda_n)?;
        writeln!(f, "lambda_p = {}", self.lambda_p)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "momentum = {}", self.momentum)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "schedule = {}", name_of(SCHEDULES, &self.schedule))?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "data_seed = {}", self.data_seed())?;
        let widths: Vec<String> = self.encoder_widths.iter().map(usize::to_string).collect();
        writeln!(f, "encoder_widths = {}", widths.join(","))?;
        writeln!(f, "d_z = {}", self.d_z)?;
        writeln!(f, "proj_hidden = {}", self.proj_hidden.unwrap_or(self.d_z))?;
        writeln!(f, "proj_dim = {}", self.proj_dim)?;
        writeln!(f, "activation = {}", name_of(ACTIVATIONS, &self.activation))?;
        writeln!(f, "use_contrastive = {}", self.use_contrastive)?;
        writeln!(f, "use_focal = {}", self.use_focal)?;
        writeln!(f, "use_generation = {}", self.use_generation)?;
        writeln!(f, "use_mixed_ce = {}", self.use_mixed_ce)?;
        writeln!(f, "mixup = {}", name_of(MIXUPS, &self.mixup))?;
        match &self.dataset {
            DatasetSpec::Blobs { params, test_per_class } => {
                writeln!(f, "dataset = blobs")?;
                writeln!(f, "blobs_classes = {}", params.classes)?;
                writeln!(f, "blobs_per_class = {}", params.n_per_class)?;
                writeln!(f, "blobs_separation = {}", params.separation)?;
                writeln!(f, "blobs_noise = {}", params.noise)?;
                writeln!(f, "blobs_dim = {}", params.dim)?;
                writeln!(f, "test_per_class = {test_per_class}")
            }
            DatasetSpec::Moons {
                n_per_class,
                test_per_class,
                noise,
            } => {
                writeln!(f, "dataset = moons")?;
                writeln!(f, "moons_per_class = {n_per_class}")?;
                writeln!(f, "test_per_class = {test_per_class}")?;
                writeln!(f, "moons_noise = {noise}")
            }
            DatasetSpec::Csv { train, test } => {
                writeln!(f, "dataset = csv")?;
                writeln!(f, "train_csv = {}", train.display())?;
                match test {
                    Some(t) => writeln!(f, "test_csv = {}", t.display()),
                    None => Ok(()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("# nothing\n\n", None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.tau, c.lambda_n, c.lambda_p, c.momentum, c.weight_decay), (0.07, 0.8, 0.0, 0.9, 1e-4));
        assert_eq!(c.proj_dim, 32);
    }

    #[test]
    fn resolved_text_round_trips() {
        let text = "eta=0.1\nschedule = linear # comment\nencoder_widths = 8,4\nactivation=relu\nmixup=random\n\
                    dataset=moons\nmoons_noise=0.2\nuse_focal=false\nseed=9\n";
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.eta, 0.1);
        assert_eq!(c.schedule, ScheduleKind::Linear);
        assert_eq!(c.encoder_widths, vec![8, 4]);
        assert!(!c.use_focal);
        let back = RunConfig::parse(&c.to_string(), None).unwrap();
        // resolution pins data_seed and proj_hidden
        assert_eq!(back.data_seed(), c.data_seed());
        assert_eq!(back.to_string(), c.to_string());

        let empty = RunConfig::parse("encoder_widths =\n", None).unwrap();
        assert!(empty.encoder_widths.is_empty());
    }

    #[test]
    fn field_level_errors() {
        let field = |text: &str| match RunConfig::parse(text, None) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("tau = 0\n"), "tau");
        assert_eq!(field("tau = abc\n"), "tau");
        assert_eq!(field("lambda_n = 1.5\n"), "lambda_n");
        assert_eq!(field("batch_size = 1\n"), "batch_size");
        assert_eq!(field("epochs = 0\n"), "epochs");
        assert_eq!(field("eta = -1\n"), "eta");
        assert_eq!(field("bogus = 1\n"), "bogus");
        assert_eq!(field("eta = 1\neta = 2\n"), "eta");
        assert_eq!(field("schedule = step\n"), "schedule");
        assert_eq!(field("dataset = csv\n"), "train_csv");
        assert_eq!(field("dataset = moons\nblobs_dim = 3\n"), "blobs_dim");
        assert_eq!(field("no equals sign\n"), "no equals sign");
    }

    #[test]
    fn csv_paths_resolve_against_config_dir() {
        let c = RunConfig::parse("dataset = csv\ntrain_csv = data/a.csv\n", Some(Path::new("/tmp/run"))).unwrap();
        match c.dataset {
            DatasetSpec::Csv { train, test } => {
                assert_eq!(train, PathBuf::from("/tmp/run/data/a.csv"));
                assert!(test.is_none());
            }
            other => panic!("{other:?}"),
        }
    }
}
