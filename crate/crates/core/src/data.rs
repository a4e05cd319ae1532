//! Dataset ingestion and splitting.
//!
//! Samples arrive as JSON Lines, one record per face:
//! `{"id": str, "landmarks": [[x,y,z] × 68], "pose": {"yaw": f, "pitch": f,
//! "roll": f}, "image": optional path}`. Angles are degrees. Landmark
//! coordinates stay in whatever units the upstream detector produced;
//! normalization happens in [`crate::preprocess`].

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LANDMARK_COUNT: usize = 68;

/// Head orientation in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array()
            .iter()
            .all(|a| a.is_finite() && a.abs() <= 180.0)
    }
}

/// A 64×64 RGB face crop with channel-major pixels scaled to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    pixels: Vec<f64>,
}

impl FaceImage {
    pub const SIDE: usize = 64;
    pub const CHANNELS: usize = 3;

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        let expect = Self::CHANNELS * Self::SIDE * Self::SIDE;
        if pixels.len() != expect {
            return Err(Error::dim(format!(
                "face image needs {expect} values (3x64x64), got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Parameter("face image values must lie in [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Input(format!("cannot read image {}: {e}", path.display())))?
            .to_rgb8();
        if img.width() as usize != Self::SIDE || img.height() as usize != Self::SIDE {
            return Err(Error::Input(format!(
                "image {} is {}x{}, expected 64x64",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let mut pixels = vec![0.0; Self::CHANNELS * Self::SIDE * Self::SIDE];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[c * Self::SIDE * Self::SIDE + y as usize * Self::SIDE + x as usize] =
                    p.0[c] as f64 / 255.0;
            }
        }
        Ok(Self { pixels })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[Self::CHANNELS, Self::SIDE, Self::SIDE], self.pixels.clone())
            .expect("face image shape is fixed")
    }
}

/// One sample as produced by an external 68-point landmark detector.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLandmarkSet {
    pub sample_id: String,
    /// Exactly 68 ordered 3-D points in detector units.
    pub points: Vec<[f64; 3]>,
    pub pose: PoseAngles,
    pub image_ref: Option<PathBuf>,
    /// Populated by [`load_dataset`] when images are requested.
    pub image: Option<FaceImage>,
}

impl RawLandmarkSet {
    fn validate(&self) -> Result<()> {
        if self.points.len() != LANDMARK_COUNT {
            return Err(Error::Validation {
                sample_id: self.sample_id.clone(),
                msg: format!("expected 68 landmarks, got {}", self.points.len()),
            });
        }
        if self
            .points
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Validation {
                sample_id: self.sample_id.clone(),
                msg: "non-finite landmark coordinate".into(),
            });
        }
        if !self.pose.is_valid() {
            return Err(Error::Validation {
                sample_id: self.sample_id.clone(),
                msg: format!(
                    "pose angles must be finite degrees in [-180, 180], got {:?}",
                    self.pose
                ),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    landmarks: Vec<[f64; 3]>,
    pose: PoseAngles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

/// Parses and validates a single JSON record; relative image paths are
/// resolved against `base`.
pub fn parse_record(line: &str, base: &Path) -> Result<RawLandmarkSet> {
    let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let sample = RawLandmarkSet {
        sample_id: rec.id,
        points: rec.landmarks,
        pose: rec.pose,
        image_ref: rec.image.as_ref().map(|s| base.join(s)),
        image: None,
    };
    sample.validate()?;
    Ok(sample)
}

/// Reads one JSONL file, or every `*.jsonl` in a directory in name order.
///
/// With `with_images`, each record's `image` path (resolved relative to its
/// file) is loaded as a 64×64 PNG.
pub fn load_dataset(path: &Path, with_images: bool) -> Result<Vec<RawLandmarkSet>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut samples = Vec::new();
    for file in &files {
        let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        let reader = BufReader::new(fs::File::open(file)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("{} ({})", e, file.display()),
            })?;
            let image_ref = rec.image.as_ref().map(|s| base.join(s));
            let image = match (&image_ref, with_images) {
                (Some(p), true) => Some(FaceImage::load_png(p)?),
                _ => None,
            };
            let sample = RawLandmarkSet {
                sample_id: rec.id,
                points: rec.landmarks,
                pose: rec.pose,
                image_ref,
                image,
            };
            sample.validate()?;
            samples.push(sample);
        }
    }
    Ok(samples)
}

/// Writes samples back out in the same JSONL schema.
pub fn save_dataset(samples: &[RawLandmarkSet], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for s in samples {
        let rec = Record {
            id: s.sample_id.clone(),
            landmarks: s.points.clone(),
            pose: s.pose,
            image: s
                .image_ref
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned()),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Persistence(e.to_string())
    }
}

/// A reproducible 70:30 partition of sample ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles the ids with the given seed and keeps `round(0.7·n)` for training.
pub fn split_70_30(samples: &[RawLandmarkSet], seed: u64) -> Result<DatasetSplit> {
    if samples.len() < 10 {
        return Err(Error::Precondition(format!(
            "split needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let mut ids: Vec<String> = samples.iter().map(|s| s.sample_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (0.7 * samples.len() as f64).round() as usize;
    let test = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        test,
        seed,
    })
}

/// Index samples by id in the order a split names them.
pub fn select_by_ids<'a>(samples: &'a [RawLandmarkSet], ids: &[String]) -> Vec<&'a RawLandmarkSet> {
    let by_id: std::collections::HashMap<&str, &RawLandmarkSet> = samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s))
        .collect();
    ids.iter()
        .filter_map(|id| by_id.get(id.as_str()).copied())
        .collect()
}
