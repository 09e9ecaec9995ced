use std::path::{Path, PathBuf};

use duoview::captioner::CaptionConfig;
use duoview::corpus::WorldConfig;
use duoview::encoders::HyperConfig;
use duoview::objective::TextViews;
use duoview::pairing::{ClipLength, FilterConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Benchmark settings for the held-out split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub window_s: f64,
    pub stride_s: f64,
    pub iou_threshold: f64,
    /// Held-out videos generated after the training ones.
    pub n_test_videos: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            window_s: 12.0,
            stride_s: 2.0,
            iou_threshold: 0.5,
            n_test_videos: 16,
        }
    }
}

/// Cells swept by `ablate`: every combination of the three lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub views: Vec<TextViews>,
    pub clip_lengths: Vec<ClipLength>,
    pub frames: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            views: vec![TextViews::Both, TextViews::A, TextViews::W],
            clip_lengths: vec![
                ClipLength::default(),
                ClipLength::Fixed { seconds: 2.0 },
                ClipLength::Fixed { seconds: 4.0 },
                ClipLength::Fixed { seconds: 10.0 },
            ],
            frames: vec![1, 4],
        }
    }
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<(TextViews, ClipLength, usize)> {
        let mut out = Vec::new();
        for &v in &self.views {
            for &l in &self.clip_lengths {
                for &t in &self.frames {
                    out.push((v, l, t));
                }
            }
        }
        out
    }
}

/// Short label for a clip-length mode, as used in CSV rows.
pub fn clip_length_label(l: &ClipLength) -> String {
    match *l {
        ClipLength::Random { min_s, max_s } => format!("random{min_s}-{max_s}"),
        ClipLength::Fixed { seconds } => format!("fixed{seconds}"),
    }
}

/// Everything one run needs. Missing JSON fields take their defaults, which
/// form the bundled demo configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Where `gen-data` writes the corpus; `<out_dir>/corpus` when unset.
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// `world.seed` is replaced by the run seed.
    pub world: WorldConfig,
    /// An empty keyword list means the world's keyword vocabulary.
    pub filter: FilterConfig,
    /// Includes the text views and the frame count.
    pub hyper: HyperConfig,
    pub clip_length: ClipLength,
    pub pairs_per_a: usize,
    pub caption: CaptionConfig,
    pub eval: EvalConfig,
    pub ablation: AblationGrid,
    /// Single commands use the first seed; `ablate` averages over all.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            out_dir: PathBuf::from("out"),
            world: WorldConfig::default(),
            filter: FilterConfig::default(),
            hyper: HyperConfig::default(),
            clip_length: ClipLength::default(),
            pairs_per_a: 4,
            caption: CaptionConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationGrid::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus_dir.clone().unwrap_or_else(|| self.out_dir.join("corpus"))
    }

    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn world_for(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            seed,
            ..self.world.clone()
        }
    }

    pub fn filter_for(&self) -> FilterConfig {
        let mut f = self.filter.clone();
        if f.keyword_list.is_empty() {
            f.keyword_list = self.world.keyword_vocab.clone();
        }
        f
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut check = |r: duoview::Result<()>| {
            if let Err(e) = r {
                bad.push(e.to_string());
            }
        };
        check(self.world.validate());
        check(self.filter.validate());
        check(self.hyper.validate());
        check(self.clip_length.validate());
        check(self.caption.validate());
        for l in &self.ablation.clip_lengths {
            check(l.validate());
        }
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) {
            bad.push("eval.ks must be non-empty and positive".into());
        }
        if !(e.window_s > 0.0 && e.stride_s > 0.0) {
            bad.push("eval window and stride must be positive".into());
        }
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            bad.push(format!("eval.iou_threshold = {} is outside (0, 1]", e.iou_threshold));
        }
        if e.n_test_videos == 0 {
            bad.push("eval.n_test_videos must be positive".into());
        }
        if self.pairs_per_a == 0 {
            bad.push("pairs_per_a must be positive".into());
        }
        if self.seeds.is_empty() {
            bad.push("seeds must not be empty".into());
        }
        let g = &self.ablation;
        if g.views.is_empty() || g.clip_lengths.is_empty() || g.frames.is_empty() || g.frames.contains(&0) {
            bad.push("every ablation axis needs at least one value and frames must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad.join("; ")))
        }
    }
}
