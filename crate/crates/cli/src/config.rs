//! Run configuration: built-in defaults, then an INI file, then flags.
//!
//! ```ini
//! [paths]
//! corpus = data/train.json
//! embeddings = data/vectors.txt
//! out = runs/first
//!
//! [model]
//! hidden_dim = 50
//! k_interactions = 20
//!
//! [train]
//! epochs = 30
//! seed = 7
//!
//! [sharing]
//! no_auxiliary = true
//! ```
//!
//! Unknown sections and keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use ini::Ini;
use mtmn::{ModelConfig, SharingConfig, TrainConfig};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub hidden_dim: usize,
    pub k_interactions: usize,
    pub factor_rank: usize,
    pub layers: usize,
    pub train_embeddings: bool,
    pub train: TrainConfig,
    pub no_tensor_sharing: bool,
    pub single_shared_tensor: bool,
    pub no_feature_sharing: bool,
    pub no_auxiliary: bool,
    pub m_list: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let full = ModelConfig::full_size(1, 5);
        RunConfig {
            corpus: None,
            validation: None,
            embeddings: None,
            checkpoint: None,
            out: None,
            hidden_dim: full.hidden_dim,
            k_interactions: full.interactions,
            factor_rank: full.factor_rank,
            layers: full.layers,
            train_embeddings: false,
            train: TrainConfig::default(),
            no_tensor_sharing: false,
            single_shared_tensor: false,
            no_feature_sharing: false,
            no_auxiliary: false,
            m_list: Vec::new(),
        }
    }
}

/// Every accepted `(section, key)` pair, in echo order.
const KEYS: &[(&str, &str)] = &[
    ("paths", "corpus"),
    ("paths", "validation"),
    ("paths", "embeddings"),
    ("paths", "checkpoint"),
    ("paths", "out"),
    ("model", "hidden_dim"),
    ("model", "k_interactions"),
    ("model", "factor_rank"),
    ("model", "layers"),
    ("model", "train_embeddings"),
    ("train", "seed"),
    ("train", "epochs"),
    ("train", "lambda"),
    ("train", "dropout"),
    ("train", "lr"),
    ("train", "rho"),
    ("train", "eps"),
    ("train", "shuffle"),
    ("train", "lr_decay"),
    ("sharing", "no_tensor_sharing"),
    ("sharing", "single_shared_tensor"),
    ("sharing", "no_feature_sharing"),
    ("sharing", "no_auxiliary"),
    ("sweep", "m_list"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("{key}: expected true or false, got {other:?}")),
    }
}

pub fn parse_m_list(value: &str) -> Result<Vec<usize>, String> {
    let list: Vec<usize> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse("m_list", s))
        .collect::<Result<_, _>>()?;
    if list.contains(&0) {
        return Err("m_list: factor ranks must be positive".into());
    }
    Ok(list)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let path = || (!value.trim().is_empty()).then(|| PathBuf::from(value.trim()));
        let t = &mut self.train;
        match (section, key) {
            ("paths", "corpus") => self.corpus = path(),
            ("paths", "validation") => self.validation = path(),
            ("paths", "embeddings") => self.embeddings = path(),
            ("paths", "checkpoint") => self.checkpoint = path(),
            ("paths", "out") => self.out = path(),
            ("model", "hidden_dim") => self.hidden_dim = parse(key, value)?,
            ("model", "k_interactions") => self.k_interactions = parse(key, value)?,
            ("model", "factor_rank") => self.factor_rank = parse(key, value)?,
            ("model", "layers") => self.layers = parse(key, value)?,
            ("model", "train_embeddings") => self.train_embeddings = parse_bool(key, value)?,
            ("train", "seed") => t.seed = parse(key, value)?,
            ("train", "epochs") => t.epochs = parse(key, value)?,
            ("train", "lambda") => t.lambda = parse(key, value)?,
            ("train", "dropout") => t.dropout = parse(key, value)?,
            ("train", "lr") => t.lr = parse(key, value)?,
            ("train", "rho") => t.rho = parse(key, value)?,
            ("train", "eps") => t.eps = parse(key, value)?,
            ("train", "shuffle") => t.shuffle = parse_bool(key, value)?,
            ("train", "lr_decay") => {
                t.lr_decay = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            ("sharing", "no_tensor_sharing") => self.no_tensor_sharing = parse_bool(key, value)?,
            ("sharing", "single_shared_tensor") => self.single_shared_tensor = parse_bool(key, value)?,
            ("sharing", "no_feature_sharing") => self.no_feature_sharing = parse_bool(key, value)?,
            ("sharing", "no_auxiliary") => self.no_auxiliary = parse_bool(key, value)?,
            ("sweep", "m_list") => self.m_list = parse_m_list(value)?,
            _ if KEYS.iter().any(|&(_, k)| k == key) => {
                return Err(format!("key {key:?} does not belong in section [{section}]"))
            }
            _ => return Err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> String {
        let t = &self.train;
        match (section, key) {
            ("paths", "corpus") => show_path(&self.corpus),
            ("paths", "validation") => show_path(&self.validation),
            ("paths", "embeddings") => show_path(&self.embeddings),
            ("paths", "checkpoint") => show_path(&self.checkpoint),
            ("paths", "out") => show_path(&self.out),
            ("model", "hidden_dim") => self.hidden_dim.to_string(),
            ("model", "k_interactions") => self.k_interactions.to_string(),
            ("model", "factor_rank") => self.factor_rank.to_string(),
            ("model", "layers") => self.layers.to_string(),
            ("model", "train_embeddings") => self.train_embeddings.to_string(),
            ("train", "seed") => t.seed.to_string(),
            ("train", "epochs") => t.epochs.to_string(),
            ("train", "lambda") => t.lambda.to_string(),
            ("train", "dropout") => t.dropout.to_string(),
            ("train", "lr") => t.lr.to_string(),
            ("train", "rho") => t.rho.to_string(),
            ("train", "eps") => t.eps.to_string(),
            ("train", "shuffle") => t.shuffle.to_string(),
            ("train", "lr_decay") => t.lr_decay.map_or("none".into(), |d| d.to_string()),
            ("sharing", "no_tensor_sharing") => self.no_tensor_sharing.to_string(),
            ("sharing", "single_shared_tensor") => self.single_shared_tensor.to_string(),
            ("sharing", "no_feature_sharing") => self.no_feature_sharing.to_string(),
            ("sharing", "no_auxiliary") => self.no_auxiliary.to_string(),
            ("sweep", "m_list") => self.m_list.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            _ => unreachable!("unlisted key {section}.{key}"),
        }
    }

    /// Applies every entry of an INI document.
    pub fn apply_ini(&mut self, text: &str) -> Result<(), String> {
        let doc = Ini::load_from_str(text).map_err(|e| e.to_string())?;
        for (section, props) in doc.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(format!("key {key:?} appears before any section"));
                }
                continue;
            };
            if !KEYS.iter().any(|&(s, _)| s == section) {
                return Err(format!("unknown section [{section}]"));
            }
            for (key, value) in props.iter() {
                self.set(section, key, value)?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_ini(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// The effective configuration as an INI document that [`Self::apply_ini`]
    /// reads back unchanged.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, key) in KEYS {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {}", self.get(section, key));
        }
        out
    }

    /// `{"section": {"key": "value"}}` for JSON outputs.
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        for &(section, key) in KEYS {
            let entry = root.entry(section).or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(m) = entry {
                m.insert(key.into(), Value::String(self.get(section, key)));
            }
        }
        Value::Object(root)
    }

    /// The configuration as `# `-prefixed comment lines.
    pub fn comment_header(&self) -> String {
        self.to_ini()
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| format!("# {l}\n"))
            .collect()
    }

    pub fn sharing(&self) -> Result<SharingConfig, String> {
        SharingConfig::from_flags(
            self.no_tensor_sharing,
            self.single_shared_tensor,
            self.no_feature_sharing,
            self.no_auxiliary,
        )
        .map_err(|e| e.to_string())
    }

    pub fn model_config(&self, embed_dim: usize, categories: usize) -> Result<ModelConfig, String> {
        let cfg = ModelConfig {
            embed_dim,
            hidden_dim: self.hidden_dim,
            interactions: self.k_interactions,
            factor_rank: self.factor_rank,
            layers: self.layers,
            categories,
            sharing: self.sharing()?,
            train_embeddings: self.train_embeddings,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// INI configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Annotated corpus (JSON).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Validation corpus; training keeps the best checkpoint on it.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// word2vec text-format embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint directory to read.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the token-level loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Multiply the learning rate by this factor after every epoch.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Keep corpus order instead of shuffling each epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Hidden size of the sentence GRU.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Number of memory layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Interaction slices per tensor.
    #[arg(long)]
    pub k_interactions: Option<usize>,
    /// Size of the shared tensor basis.
    #[arg(long)]
    pub factor_rank: Option<usize>,
    /// Update the embedding table during training.
    #[arg(long)]
    pub train_embeddings: bool,
    /// One independent interaction tensor per category.
    #[arg(long)]
    pub no_tensor_sharing: bool,
    /// One interaction tensor shared by every category.
    #[arg(long)]
    pub single_shared_tensor: bool,
    /// Turn off similarity-weighted feature mixing.
    #[arg(long)]
    pub no_feature_sharing: bool,
    /// Drop the sentence-level auxiliary task.
    #[arg(long)]
    pub no_auxiliary: bool,
}

impl RunArgs {
    /// Layers `base`, the `--config` file and the flags.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig, String> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let paths = [
            (&self.corpus, &mut cfg.corpus),
            (&self.validation, &mut cfg.validation),
            (&self.embeddings, &mut cfg.embeddings),
            (&self.checkpoint, &mut cfg.checkpoint),
            (&self.out, &mut cfg.out),
        ];
        for (flag, slot) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lambda {
            t.lambda = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if self.lr_decay.is_some() {
            t.lr_decay = self.lr_decay;
        }
        t.shuffle &= !self.no_shuffle;
        if let Some(v) = self.hidden_dim {
            cfg.hidden_dim = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.k_interactions {
            cfg.k_interactions = v;
        }
        if let Some(v) = self.factor_rank {
            cfg.factor_rank = v;
        }
        cfg.train_embeddings |= self.train_embeddings;
        cfg.no_tensor_sharing |= self.no_tensor_sharing;
        cfg.single_shared_tensor |= self.single_shared_tensor;
        cfg.no_feature_sharing |= self.no_feature_sharing;
        cfg.no_auxiliary |= self.no_auxiliary;
        cfg.train.validate().map_err(|e| e.to_string())?;
        cfg.sharing()?;
        Ok(cfg)
    }
}
