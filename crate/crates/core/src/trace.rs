//! Record/replay trace files.
//!
//! UTF-8, one JSON object per line. The first line is a calibration header
//! `{"cal":{"neutral":[x,y,z],"forward":[fx,fy]}}`; every following line is
//! either a hand sample `{"t":s,"p":[x,y,z],"grip":g}` or another calibration
//! line (a recalibration at that point of the stream). Floats are written in
//! shortest round-trip form, so write-then-parse reproduces every value
//! bit-for-bit.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch;
use crate::gesture::{
    frame_bytes, frame_count, trace_duration, CommandFrame, Decimator, GestureCalibration,
    GestureConfig, GestureError, HandSample, VerticalTransform,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace is empty; expected a calibration header")]
    MissingHeader,
    #[error("trace I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceEntry {
    Calibration(GestureCalibration),
    Sample(HandSample),
}

#[derive(Serialize, Deserialize)]
struct CalLine {
    cal: CalBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalBody {
    neutral: [f64; 3],
    forward: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    t: f64,
    p: [f64; 3],
    grip: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyLine {
    Cal(CalLine),
    Sample(SampleLine),
}

impl TraceEntry {
    pub fn to_line(&self) -> String {
        let out = match self {
            TraceEntry::Calibration(cal) => serde_json::to_string(&CalLine {
                cal: CalBody {
                    neutral: cal.neutral.into(),
                    forward: cal.forward.into(),
                },
            }),
            TraceEntry::Sample(s) => serde_json::to_string(&SampleLine {
                t: s.t,
                p: s.position.into(),
                grip: s.grip,
            }),
        };
        out.expect("trace lines serialize")
    }

    fn from_line(text: &str) -> Result<Self, String> {
        let parsed: AnyLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let entry = match parsed {
            AnyLine::Cal(c) => TraceEntry::Calibration(
                GestureCalibration::new(
                    Vector3::from(c.cal.neutral),
                    Vector2::from(c.cal.forward),
                )
                .map_err(|e: GestureError| e.to_string())?,
            ),
            AnyLine::Sample(s) => TraceEntry::Sample(
                HandSample::new(s.t, Vector3::from(s.p), s.grip).map_err(|e| e.to_string())?,
            ),
        };
        Ok(entry)
    }
}

/// A parsed trace: header calibration followed by the ordered entry stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn new(calibration: GestureCalibration) -> Self {
        Self {
            entries: vec![TraceEntry::Calibration(calibration)],
        }
    }

    pub fn calibration(&self) -> &GestureCalibration {
        match &self.entries[0] {
            TraceEntry::Calibration(c) => c,
            TraceEntry::Sample(_) => unreachable!("trace always starts with a calibration"),
        }
    }

    pub fn push_sample(&mut self, sample: HandSample) {
        self.entries.push(TraceEntry::Sample(sample));
    }

    pub fn samples(&self) -> impl Iterator<Item = &HandSample> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Sample(s) => Some(s),
            TraceEntry::Calibration(_) => None,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples().count()
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut entries = Vec::new();
        let mut prev_t: Option<f64> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let entry =
                TraceEntry::from_line(raw).map_err(|msg| TraceError::Parse { line, msg })?;
            match entry {
                TraceEntry::Sample(s) => {
                    if entries.is_empty() {
                        return Err(TraceError::Parse {
                            line,
                            msg: "first line must be a calibration header".into(),
                        });
                    }
                    if let Some(p) = prev_t {
                        if s.t < p {
                            return Err(TraceError::Parse {
                                line,
                                msg: format!("timestamp {} precedes previous sample at {p}", s.t),
                            });
                        }
                    }
                    prev_t = Some(s.t);
                }
                TraceEntry::Calibration(_) => {}
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(TraceError::MissingHeader);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Command frames for the whole trace, applying recalibrations where
    /// they occur in the stream.
    pub fn command_frames(&self, cfg: &GestureConfig) -> Result<Vec<CommandFrame>, GestureError> {
        let mut dec = Decimator::new(*self.calibration(), *cfg)?;
        let mut frames = Vec::new();
        for e in &self.entries[1..] {
            match e {
                TraceEntry::Calibration(cal) => dec.set_calibration(*cal),
                TraceEntry::Sample(s) => frames.extend(dec.push(s)?),
            }
        }
        let samples: Vec<HandSample> = self.samples().copied().collect();
        let total = frame_count(trace_duration(&samples, cfg), cfg.command_rate);
        frames.extend(dec.close_through(total));
        frames.truncate(total as usize);
        Ok(frames)
    }

    /// The same trace seen from a rotated and translated capture frame.
    pub fn transformed(&self, tf: &VerticalTransform) -> Trace {
        let entries = self
            .entries
            .iter()
            .map(|e| match e {
                TraceEntry::Calibration(cal) => TraceEntry::Calibration(tf.apply_calibration(cal)),
                TraceEntry::Sample(s) => TraceEntry::Sample(tf.apply_sample(s)),
            })
            .collect();
        Trace { entries }
    }
}

/// Per transform, whether the trace decimates to byte-identical frames in
/// the transformed capture frame.
pub fn check_trace_frame_independence(
    trace: &Trace,
    cfg: &GestureConfig,
    transforms: &[VerticalTransform],
) -> Result<Vec<bool>, GestureError> {
    let reference = frame_bytes(&trace.command_frames(cfg)?);
    batch::par_map(transforms, |tf| {
        trace
            .transformed(tf)
            .command_frames(cfg)
            .map(|f| frame_bytes(&f) == reference)
    })
    .into_iter()
    .collect()
}

/// Streaming trace writer used by live sessions.
///
/// Lines go to `<path>.partial`; [`finish`](Self::finish) renames it to
/// `path`. If writing fails the `.partial` file is left behind as the marker
/// of an aborted recording.
pub struct TraceRecorder {
    out: BufWriter<File>,
    partial: PathBuf,
    path: PathBuf,
    lines: usize,
}

impl TraceRecorder {
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        let partial = partial_path(path);
        let out = BufWriter::new(File::create(&partial)?);
        Ok(Self {
            out,
            partial,
            path: path.to_path_buf(),
            lines: 0,
        })
    }

    pub fn append(&mut self, entry: &TraceEntry) -> Result<(), TraceError> {
        writeln!(self.out, "{}", entry.to_line())?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines_written(&self) -> usize {
        self.lines
    }

    pub fn finish(mut self) -> Result<PathBuf, TraceError> {
        self.out.flush()?;
        fs::rename(&self.partial, &self.path)?;
        Ok(self.path)
    }
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}
