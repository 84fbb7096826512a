//! Rollout dataset serialization: magic "FPRB0001", then per record the
//! task id, action, solved flag, and every frame's object features as
//! little-endian f32.

use super::features::{ObjectState, FEAT};
use super::ForwardError;
use std::io::{Read, Write};
use tumble_core::actions::{Action, ActionBall, Tier};
use tumble_core::tasks::TaskId;

pub const DATASET_MAGIC: &[u8; 8] = b"FPRB0001";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub task: TaskId,
    pub action: Action,
    pub solved: bool,
    /// 1 fps object-state frames over the full episode.
    pub frames: Vec<Vec<ObjectState>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn balance(&self) -> (usize, usize) {
        let solving = self.records.iter().filter(|r| r.solved).count();
        (solving, self.records.len() - solving)
    }
}

pub fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> Result<(), ForwardError> {
    let io = |e: std::io::Error| ForwardError::Dataset(e.to_string());
    out.write_all(DATASET_MAGIC).map_err(io)?;
    out.write_all(&(dataset.records.len() as u32).to_le_bytes())
        .map_err(io)?;
    for r in &dataset.records {
        out.write_all(&r.task.template_id.to_le_bytes()).map_err(io)?;
        out.write_all(&r.task.instance.to_le_bytes()).map_err(io)?;
        let n_balls = r.action.balls.len() as u8;
        out.write_all(&[n_balls]).map_err(io)?;
        for b in &r.action.balls {
            for v in [b.x, b.y, b.radius] {
                out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        out.write_all(&[r.solved as u8]).map_err(io)?;
        out.write_all(&(r.frames.len() as u32).to_le_bytes()).map_err(io)?;
        let n_objects = r.frames.first().map(|f| f.len()).unwrap_or(0);
        out.write_all(&(n_objects as u32).to_le_bytes()).map_err(io)?;
        for frame in &r.frames {
            if frame.len() != n_objects {
                return Err(ForwardError::Dataset(
                    "object count varies within a record".into(),
                ));
            }
            for obj in frame {
                for v in obj.0 {
                    out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_dataset(input: &mut impl Read) -> Result<Dataset, ForwardError> {
    let io = |e: std::io::Error| ForwardError::Dataset(e.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != DATASET_MAGIC {
        return Err(ForwardError::Dataset("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf).map_err(io)?;
    let n_records = u32::from_le_bytes(u32buf);
    let read_f32 = |input: &mut dyn Read| -> Result<f64, ForwardError> {
        let mut b = [0u8; 4];
        input.read_exact(&mut b).map_err(|e| ForwardError::Dataset(e.to_string()))?;
        Ok(f32::from_le_bytes(b) as f64)
    };

    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        input.read_exact(&mut u32buf).map_err(io)?;
        let template_id = u32::from_le_bytes(u32buf);
        input.read_exact(&mut u32buf).map_err(io)?;
        let instance = u32::from_le_bytes(u32buf);
        let mut byte = [0u8; 1];
        input.read_exact(&mut byte).map_err(io)?;
        let n_balls = byte[0] as usize;
        if !(1..=2).contains(&n_balls) {
            return Err(ForwardError::Dataset(format!("bad ball count {n_balls}")));
        }
        let mut balls = Vec::with_capacity(n_balls);
        for _ in 0..n_balls {
            balls.push(ActionBall {
                x: read_f32(input)?,
                y: read_f32(input)?,
                radius: read_f32(input)?,
            });
        }
        input.read_exact(&mut byte).map_err(io)?;
        let solved = byte[0] != 0;
        input.read_exact(&mut u32buf).map_err(io)?;
        let n_frames = u32::from_le_bytes(u32buf) as usize;
        input.read_exact(&mut u32buf).map_err(io)?;
        let n_objects = u32::from_le_bytes(u32buf) as usize;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let mut frame = Vec::with_capacity(n_objects);
            for _ in 0..n_objects {
                let mut f = [0.0; FEAT];
                for v in f.iter_mut() {
                    *v = read_f32(input)?;
                }
                frame.push(ObjectState(f));
            }
            frames.push(frame);
        }
        records.push(DatasetRecord {
            task: TaskId::new(template_id, instance),
            action: Action {
                tier: if n_balls == 1 { Tier::B } else { Tier::TwoB },
                balls,
            },
            solved,
            frames,
        });
    }
    Ok(Dataset { records })
}
