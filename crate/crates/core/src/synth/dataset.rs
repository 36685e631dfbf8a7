use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{gen_clip, io, mix_seed, Clip, Domain, DomainShift, SceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Source,
    TargetTrain,
    TargetEval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Source, Split::TargetTrain, Split::TargetEval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::TargetTrain => "target_train",
            Split::TargetEval => "target_eval",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Split::Source => Domain::Source,
            Split::TargetTrain | Split::TargetEval => Domain::Target,
        }
    }
}

/// Dataset generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub length: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub shift: DomainShift,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            height: 64,
            width: 64,
            classes: 5,
            length: 4,
            n_source: 200,
            n_target: 200,
            n_eval: 50,
            seed: 0,
            shift: DomainShift::default(),
        }
    }
}

impl GenConfig {
    fn count(&self, split: Split) -> usize {
        match split {
            Split::Source => self.n_source,
            Split::TargetTrain => self.n_target,
            Split::TargetEval => self.n_eval,
        }
    }

    fn scene(&self, domain: Domain) -> SceneSpec {
        SceneSpec {
            domain,
            shift: self.shift.clone(),
            ..SceneSpec::new(self.height, self.width, self.classes, self.length)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    /// Path relative to the manifest root.
    pub file: String,
    pub seed: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub length: usize,
    pub seed: u64,
    pub shift: DomainShift,
    pub source: Vec<ClipEntry>,
    pub target_train: Vec<ClipEntry>,
    pub target_eval: Vec<ClipEntry>,
    /// Target training labels exist on disk for oracle checks only; the
    /// regular loaders strip them.
    pub target_train_labels_withheld: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[ClipEntry] {
        match split {
            Split::Source => &self.source,
            Split::TargetTrain => &self.target_train,
            Split::TargetEval => &self.target_eval,
        }
    }

    pub fn clip_count(&self) -> usize {
        Split::ALL.iter().map(|&s| self.entries(s).len()).sum()
    }

    /// SHA-256 over the manifest with `root` blanked, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut m = self.clone();
        m.root = PathBuf::new();
        let json = serde_json::to_vec(&m).expect("manifest serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.classes) {
            return Err(Error::InvalidManifest(format!("class count {} outside 2..=8", self.classes)));
        }
        if self.length < 3 {
            return Err(Error::InvalidManifest(format!("clip length {} below 3", self.length)));
        }
        if self.source.is_empty() {
            return Err(Error::InvalidManifest("no source clips".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidManifest(format!("{}: {e}", file.display())))?;
        if m.root.as_os_str().is_empty() || !m.root.exists() {
            m.root = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let file = self.root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&file, json).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }
}

/// Writes every clip and the manifest under `out_dir`.
pub fn gen_dataset(config: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        height: config.height,
        width: config.width,
        classes: config.classes,
        length: config.length,
        seed: config.seed,
        shift: config.shift.clone(),
        source: Vec::new(),
        target_train: Vec::new(),
        target_eval: Vec::new(),
        target_train_labels_withheld: true,
    };
    for (split_idx, split) in Split::ALL.into_iter().enumerate() {
        let scene = config.scene(split.domain());
        let mut entries = Vec::with_capacity(config.count(split));
        for i in 0..config.count(split) {
            let seed = mix_seed(config.seed, ((split_idx as u64) << 32) | i as u64);
            let mut clip = gen_clip(seed, &scene)?;
            clip.clip_id = format!("{}-{i:04}", split.name());
            let file = format!("clips/{}/{}.tpsc", split.name(), clip.clip_id);
            let crc32 = io::save_clip(&clip, &out_dir.join(&file))?;
            entries.push(ClipEntry {
                id: clip.clip_id,
                file,
                seed,
                crc32,
            });
        }
        match split {
            Split::Source => manifest.source = entries,
            Split::TargetTrain => manifest.target_train = entries,
            Split::TargetEval => manifest.target_eval = entries,
        }
    }
    manifest.save()?;
    Ok(manifest)
}

/// Read access to a generated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Dataset {
            manifest: DatasetManifest::load(path)?,
        })
    }

    fn load_entry(&self, entry: &ClipEntry) -> Result<Clip> {
        let path = self.manifest.root.join(&entry.file);
        let clip = io::load_clip(&path)?;
        clip.validate()?;
        if clip.classes != self.manifest.classes
            || (clip.height(), clip.width()) != (self.manifest.height, self.manifest.width)
            || clip.len() != self.manifest.length
        {
            return Err(Error::InvalidManifest(format!(
                "{} disagrees with the manifest geometry",
                path.display()
            )));
        }
        Ok(clip)
    }

    /// Clips of `split` as training code may see them: target training
    /// clips come back without labels.
    pub fn load_split(&self, split: Split) -> Result<Vec<Clip>> {
        let withhold = split == Split::TargetTrain && self.manifest.target_train_labels_withheld;
        self.manifest
            .entries(split)
            .iter()
            .map(|e| {
                let clip = self.load_entry(e)?;
                Ok(if withhold { clip.without_labels() } else { clip })
            })
            .collect()
    }

    /// Clips with every stored label, for oracle checks.
    pub fn load_split_with_oracle_labels(&self, split: Split) -> Result<Vec<Clip>> {
        self.manifest.entries(split).iter().map(|e| self.load_entry(e)).collect()
    }

    /// Re-reads every clip and compares its checksum with the manifest.
    pub fn verify(&self) -> Result<()> {
        for split in Split::ALL {
            for e in self.manifest.entries(split) {
                let path = self.manifest.root.join(&e.file);
                let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
                let crc = crc32fast::hash(&bytes);
                if crc != e.crc32 {
                    return Err(Error::Checksum {
                        stored: e.crc32,
                        computed: crc,
                    });
                }
                io::parse_clip(&bytes)?.validate()?;
            }
        }
        Ok(())
    }
}
