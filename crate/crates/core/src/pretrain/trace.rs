use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PretrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSplit {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub epoch: usize,
    pub split: TraceSplit,
    pub loss: f64,
}

/// Per-step training loss and per-epoch validation loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    entries: Vec<TraceEntry>,
    best: Vec<f64>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_train(&mut self, step: usize, epoch: usize, loss: f64) {
        self.entries.push(TraceEntry {
            step,
            epoch,
            split: TraceSplit::Train,
            loss,
        });
    }

    /// Records a validation loss; true when it improves on the best so far.
    pub fn push_val(&mut self, step: usize, epoch: usize, loss: f64) -> bool {
        self.entries.push(TraceEntry {
            step,
            epoch,
            split: TraceSplit::Val,
            loss,
        });
        let prev = self.best_val();
        let improved = prev.is_none_or(|b| loss < b);
        self.best.push(if improved { loss } else { prev.unwrap_or(loss) });
        improved
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn train(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.split == TraceSplit::Train)
    }

    pub fn val(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.split == TraceSplit::Val)
    }

    /// Running minimum of the validation entries.
    pub fn best_so_far(&self) -> &[f64] {
        &self.best
    }

    pub fn best_val(&self) -> Option<f64> {
        self.best.last().copied()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PretrainError> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(e).map_err(|e| PretrainError::Io(e.to_string()))?;
        }
        out.flush().map_err(|e| PretrainError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, PretrainError> {
        let mut t = Self::new();
        for row in csv::Reader::from_reader(r).deserialize::<TraceEntry>() {
            let e = row.map_err(|e| PretrainError::Io(e.to_string()))?;
            match e.split {
                TraceSplit::Train => t.push_train(e.step, e.epoch, e.loss),
                TraceSplit::Val => {
                    t.push_val(e.step, e.epoch, e.loss);
                }
            }
        }
        Ok(t)
    }
}
