//! Checkpoints: one line of JSON header, then every network's parameters as
//! little-endian `f64`, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::ObsMode;
use crate::mlp::Mlp;
use crate::policy::GaussianPolicy;
use crate::LearnError;

pub const FORMAT: &str = "guide-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub name: String,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub algo: String,
    pub step: usize,
    pub observation: ObsMode,
    pub act_dim: usize,
    pub with_mode: bool,
    pub networks: Vec<NetworkShape>,
    /// Training configuration, kept verbatim for provenance of the run.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub networks: Vec<Mlp>,
}

impl Checkpoint {
    pub fn for_policy(
        algo: &str,
        step: usize,
        observation: ObsMode,
        config: serde_json::Value,
        policy: &GaussianPolicy,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                algo: algo.into(),
                step,
                observation,
                act_dim: policy.act_dim,
                with_mode: policy.with_mode,
                networks: vec![NetworkShape { name: "policy".into(), sizes: policy.net.sizes().to_vec() }],
                config,
            },
            networks: vec![policy.net.clone()],
        }
    }

    pub fn policy(&self) -> Result<GaussianPolicy, LearnError> {
        let i = self
            .header
            .networks
            .iter()
            .position(|n| n.name == "policy")
            .ok_or_else(|| LearnError::Format("checkpoint has no policy network".into()))?;
        let net = self.networks[i].clone();
        let want = 2 * self.header.act_dim + usize::from(self.header.with_mode);
        if net.output_dim() != want {
            return Err(LearnError::Format(format!("policy emits {} values, expected {want}", net.output_dim())));
        }
        Ok(GaussianPolicy { net, act_dim: self.header.act_dim, with_mode: self.header.with_mode })
    }

    pub fn encode(&self) -> Result<Vec<u8>, LearnError> {
        let mut out = serde_json::to_vec(&self.header).map_err(|e| LearnError::Format(e.to_string()))?;
        out.push(b'\n');
        for net in &self.networks {
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LearnError> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| LearnError::Format("checkpoint header is not terminated".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| LearnError::Format(format!("checkpoint header: {e}")))?;
        if header.format != FORMAT {
            return Err(LearnError::Format(format!("unsupported checkpoint format {:?}", header.format)));
        }
        let mut blob = bytes[nl + 1..].chunks_exact(8);
        if !blob.remainder().is_empty() {
            return Err(LearnError::Format("parameter blob is not a whole number of f64".into()));
        }
        let mut networks = Vec::with_capacity(header.networks.len());
        for shape in &header.networks {
            let n: usize = shape.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let params: Vec<f64> = blob
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if params.len() != n {
                return Err(LearnError::Format(format!("parameter blob truncated in network {:?}", shape.name)));
            }
            networks.push(Mlp::from_params(&shape.sizes, params)?);
        }
        if blob.next().is_some() {
            return Err(LearnError::Format("trailing parameters after the last network".into()));
        }
        Ok(Self { header, networks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| LearnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LearnError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| LearnError::Io(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}
