//! Scan sequence discovery and loading.

use std::fs;
use std::path::{Path, PathBuf};

use gfloam::cloud_io::{read_scan, read_trajectory, Scan, ScanFormat, TrajectoryRecord};
use gfloam::config::Config;

use crate::failure::Failure;

/// Frame period assumed for scans that carry no timestamp.
const DEFAULT_PERIOD: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct FrameSource {
    pub path: PathBuf,
    pub format: ScanFormat,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<FrameSource>,
    /// `gt.tum` next to the scans, if present.
    pub ground_truth: Option<PathBuf>,
}

impl Sequence {
    /// A directory of `.ply`/`.bin` scans (or one with a `scans/`
    /// subdirectory), or a manifest with one `path [timestamp]` per line.
    pub fn open(input: &Path) -> Result<Self, Failure> {
        if input.is_dir() {
            let scans = input.join("scans");
            let dir = if scans.is_dir() { scans } else { input.to_path_buf() };
            let mut frames: Vec<FrameSource> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|path| {
                    ScanFormat::from_path(&path).map(|format| FrameSource {
                        path,
                        format,
                        timestamp: None,
                    })
                })
                .collect();
            frames.sort_by(|a, b| a.path.cmp(&b.path));
            let gt = input.join("gt.tum");
            Ok(Self {
                frames,
                ground_truth: gt.is_file().then_some(gt),
            })
        } else if input.is_file() {
            Self::from_manifest(input)
        } else {
            Err(Failure::data(format!("input {} does not exist", input.display())))
        }
    }

    fn from_manifest(path: &Path) -> Result<Self, Failure> {
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path)?;
        let mut frames = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let file = base.join(fields.next().expect("non-empty line"));
            let timestamp = fields
                .next()
                .map(|t| t.parse::<f64>())
                .transpose()
                .map_err(|_| Failure::data(format!("manifest line {}: bad timestamp", line_no + 1)))?;
            let format = ScanFormat::from_path(&file)
                .ok_or_else(|| Failure::data(format!("manifest line {}: unknown scan format", line_no + 1)))?;
            frames.push(FrameSource {
                path: file,
                format,
                timestamp,
            });
        }
        let gt = base.join("gt.tum");
        Ok(Self {
            frames,
            ground_truth: gt.is_file().then_some(gt),
        })
    }

    pub fn load(&self, index: usize) -> Result<Scan, Failure> {
        let source = &self.frames[index];
        let mut scan = read_scan(&source.path, source.format)
            .map_err(|e| Failure::data(format!("{}: {e}", source.path.display())))?;
        if let Some(t) = source.timestamp {
            scan.timestamp = t;
        } else if source.format == ScanFormat::RawF32x4 {
            scan.timestamp = index as f64 * DEFAULT_PERIOD;
        }
        Ok(scan)
    }

    pub fn ground_truth(&self) -> Result<Option<Vec<TrajectoryRecord>>, Failure> {
        self.ground_truth.as_deref().map(read_trajectory).transpose().map_err(Failure::from)
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}
