//! Where a sequence lives on disk: calibration, ordered frames, optional
//! ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use super::{PipelineConfig, PipelineError};
use crate::calib::{parse_calibration, CameraModel};
use crate::image::Image;

const FRAME_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub calibration: PathBuf,
    pub frames: Vec<PathBuf>,
    /// Per-frame timestamps, parallel to `frames`.
    pub timestamps: Vec<Option<f64>>,
    pub ground_truth: Option<PathBuf>,
    pub config: PipelineConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

impl DatasetManifest {
    /// Checks the invariants: at least one frame, no frame listed twice,
    /// strictly increasing timestamps where given, every file present.
    pub fn new(
        calibration: PathBuf,
        frames: Vec<PathBuf>,
        timestamps: Vec<Option<f64>>,
        ground_truth: Option<PathBuf>,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        if frames.is_empty() {
            return Err(PipelineError::NoFrames);
        }
        if timestamps.len() != frames.len() {
            return Err(PipelineError::Config(format!(
                "{} timestamps for {} frames",
                timestamps.len(),
                frames.len()
            )));
        }
        if !calibration.is_file() {
            return Err(PipelineError::Io {
                path: calibration.display().to_string(),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        for (index, path) in frames.iter().enumerate() {
            if !path.is_file() {
                return Err(PipelineError::MissingFrame {
                    index,
                    path: path.display().to_string(),
                });
            }
            if frames[..index].contains(path) {
                return Err(PipelineError::Config(format!("frame {index} repeats {}", path.display())));
            }
        }
        let mut last: Option<f64> = None;
        for (index, t) in timestamps.iter().enumerate() {
            if let Some(t) = *t {
                if last.is_some_and(|l| t <= l) {
                    return Err(PipelineError::Config(format!("timestamp of frame {index} is not increasing")));
                }
                last = Some(t);
            }
        }
        if let Some(gt) = &ground_truth {
            if !gt.is_file() {
                return Err(PipelineError::Io {
                    path: gt.display().to_string(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                });
            }
        }
        Ok(Self {
            calibration,
            frames,
            timestamps,
            ground_truth,
            config,
        })
    }

    /// Every PNG/PGM/PPM file in `dir`, in lexicographic file-name order.
    pub fn from_directory(calibration: PathBuf, dir: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        let mut frames: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .collect();
        frames.sort();
        let n = frames.len();
        Self::new(calibration, frames, vec![None; n], None, config)
    }

    /// A text file with one frame per line, `path [timestamp]`. Relative
    /// paths resolve against the list file's directory; blank lines and
    /// `#` comments are skipped.
    pub fn from_list_file(calibration: PathBuf, list: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(list).map_err(io_err(list))?;
        let base = list.parent().unwrap_or(Path::new("."));
        let mut frames = Vec::new();
        let mut timestamps = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let path = PathBuf::from(parts.next().expect("non-empty line"));
            let ts = match parts.next() {
                Some(t) => Some(t.parse::<f64>().map_err(|_| {
                    PipelineError::Config(format!("{} line {}: bad timestamp {t:?}", list.display(), line_no + 1))
                })?),
                None => None,
            };
            frames.push(if path.is_absolute() { path } else { base.join(path) });
            timestamps.push(ts);
        }
        Self::new(calibration, frames, timestamps, None, config)
    }

    /// Directory or list file, whichever `frames` is.
    pub fn from_path(calibration: PathBuf, frames: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        if frames.is_dir() {
            Self::from_directory(calibration, frames, config)
        } else {
            Self::from_list_file(calibration, frames, config)
        }
    }

    pub fn with_ground_truth(mut self, path: PathBuf) -> Result<Self, PipelineError> {
        if !path.is_file() {
            return Err(PipelineError::Io {
                path: path.display().to_string(),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        self.ground_truth = Some(path);
        Ok(self)
    }

    pub fn load_model(&self) -> Result<CameraModel, PipelineError> {
        let text = fs::read_to_string(&self.calibration).map_err(io_err(&self.calibration))?;
        Ok(parse_calibration(&text)?)
    }

    pub fn load_frame(&self, index: usize) -> Result<Image, PipelineError> {
        let path = &self.frames[index];
        if !path.is_file() {
            return Err(PipelineError::MissingFrame {
                index,
                path: path.display().to_string(),
            });
        }
        Image::load(path).map_err(|source| PipelineError::Frame { index, source })
    }
}
