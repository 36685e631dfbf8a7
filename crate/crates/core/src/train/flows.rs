use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{compose_flow, estimate_flow_blockmatch, BlockMatchParams, FlowField};
use crate::synth::Clip;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    #[default]
    GroundTruth,
    BlockMatch,
}

/// Per-step flow lookup with block-matching results cached by clip id.
#[derive(Clone, Debug)]
pub struct FlowProvider {
    source: FlowSource,
    params: BlockMatchParams,
    cache: HashMap<(String, usize), FlowField>,
}

impl FlowProvider {
    pub fn new(source: FlowSource) -> Self {
        FlowProvider {
            source,
            params: BlockMatchParams::default(),
            cache: HashMap::new(),
        }
    }

    pub fn source(&self) -> FlowSource {
        self.source
    }

    /// Flow from frame `t` to frame `t + 1`.
    pub fn step(&mut self, clip: &Clip, t: usize) -> Result<FlowField> {
        if t + 1 >= clip.len() {
            return Err(Error::ClipTooShort(format!(
                "no flow after frame {t} in the {}-frame clip {}",
                clip.len(),
                clip.clip_id
            )));
        }
        match self.source {
            FlowSource::GroundTruth => Ok(clip.gt_flow[t].clone()),
            FlowSource::BlockMatch => {
                let key = (clip.clip_id.clone(), t);
                if let Some(f) = self.cache.get(&key) {
                    return Ok(f.clone());
                }
                let f = estimate_flow_blockmatch(&clip.frames[t], &clip.frames[t + 1], self.params)?;
                self.cache.insert(key, f.clone());
                Ok(f)
            }
        }
    }

    /// Flow from frame `from` to frame `to > from`, chained step by step.
    pub fn span(&mut self, clip: &Clip, from: usize, to: usize) -> Result<FlowField> {
        if to <= from {
            return Err(Error::Config(format!("flow span {from}->{to} is not forward")));
        }
        let mut acc = self.step(clip, from)?;
        for t in from + 1..to {
            acc = compose_flow(&acc, &self.step(clip, t)?)?;
        }
        Ok(acc)
    }
}
