//! Line-delimited dataset files.
//!
//! First line is a metadata record (env name, horizon, projection); every
//! following line is one self-describing trajectory. Reading back a written
//! dataset reproduces it by value.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CodecError;
use crate::state::{Action, Dataset, ProjectionSpec, Split, SystemState, Trajectory};

#[derive(Serialize, Deserialize)]
struct MetaLine {
    env: String,
    horizon: usize,
    projection: ProjectionSpec,
}

#[derive(Serialize, Deserialize)]
struct TrajLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    init: SystemState,
    steps: Vec<(Action, SystemState)>,
}

fn io_err(e: std::io::Error) -> CodecError {
    CodecError::Io(e.to_string())
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), CodecError> {
    let meta = MetaLine {
        env: dataset.env_name.clone(),
        horizon: dataset.horizon,
        projection: dataset.projection.clone(),
    };
    let line = serde_json::to_string(&meta).map_err(|e| CodecError::Io(e.to_string()))?;
    writeln!(out, "{line}").map_err(io_err)?;
    for (traj, split) in dataset.trajectories.iter().zip(&dataset.splits) {
        let row = TrajLine {
            split: *split,
            init: traj.init.clone(),
            steps: traj.steps.clone(),
        };
        let line = serde_json::to_string(&row).map_err(|e| CodecError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset, CodecError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(CodecError::MissingHeader)?;
    let first = first.map_err(io_err)?;
    let meta: MetaLine = serde_json::from_str(&first).map_err(|e| CodecError::Line {
        line: 1,
        message: e.to_string(),
    })?;
    let mut dataset = Dataset::new(&meta.env, meta.horizon, meta.projection);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrajLine = serde_json::from_str(&line).map_err(|e| CodecError::Line {
            line: lineno,
            message: e.to_string(),
        })?;
        if row.steps.len() != meta.horizon {
            return Err(CodecError::Line {
                line: lineno,
                message: format!(
                    "trajectory horizon {} does not match header horizon {}",
                    row.steps.len(),
                    meta.horizon
                ),
            });
        }
        dataset.trajectories.push(Trajectory {
            init: row.init,
            steps: row.steps,
        });
        dataset.splits.push(row.split);
    }
    Ok(dataset)
}

pub fn write_dataset_path(dataset: &Dataset, path: &Path) -> Result<(), CodecError> {
    let file = File::create(path).map_err(io_err)?;
    write_dataset(dataset, BufWriter::new(file))
}

pub fn read_dataset_path(path: &Path) -> Result<Dataset, CodecError> {
    let file = File::open(path).map_err(io_err)?;
    read_dataset(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Extract, StateValue};

    fn tiny_dataset() -> Dataset {
        let proj = ProjectionSpec {
            dims: vec![("S".into(), Extract::Scalar { field: "S".into() })],
        };
        let mut d = Dataset::new("sir", 2, proj);
        let s = |v: i64| SystemState::build(vec![("S", StateValue::Int(v))]);
        d.push(Trajectory {
            init: s(5),
            steps: vec![(Action::NONE, s(4)), (Action::some(3), s(2))],
        });
        d.splits[0] = Some(Split::Train);
        d
    }

    #[test]
    fn roundtrip_reproduces_dataset() {
        let d = tiny_dataset();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let proj = ProjectionSpec { dims: vec![] };
        let d = Dataset::new("none", 0, proj);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = read_dataset(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, d);
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let d = tiny_dataset();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 20];
        match read_dataset(cut.as_bytes()) {
            Err(CodecError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn horizon_mismatch_is_an_error() {
        let meta = r#"{"env":"x","horizon":3,"projection":{"dims":[]}}"#;
        let row = r#"{"init":[],"steps":[]}"#;
        let text = format!("{meta}\n{row}\n");
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(CodecError::Line { line: 2, .. })
        ));
    }
}
