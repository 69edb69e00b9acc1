use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};

const OPTIMIZER_MAGIC: &[u8; 4] = b"ADAM";
const OPTIMIZER_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates, one buffer per parameter slice of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(net: &Network<f32>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f32>> = net
            .parameter_slices()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients leave both the
    /// network and the state untouched and return `false`.
    pub fn step(&mut self, net: &mut Network<f32>, grads: &Gradients<f32>, lr: f64) -> Result<bool> {
        let g = grads.slices();
        let mut params = net.parameter_slices_mut();
        if g.len() != params.len() || g.len() != self.m.len() {
            return Err(Error::shape("optimizer step", params.len(), g.len()));
        }
        for ((p, gs), m) in params.iter().zip(&g).zip(&self.m) {
            if p.len() != gs.len() || p.len() != m.len() {
                return Err(Error::shape("optimizer step slice", p.len(), gs.len()));
            }
        }
        if !grads.is_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step + 1);
            return Ok(false);
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, gs), m), v) in params.iter_mut().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = gs[i] as f64;
                let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + epsilon);
                p[i] = (p[i] as f64 - update) as f32;
            }
        }
        Ok(true)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(OPTIMIZER_MAGIC)?;
        w.write_all(&OPTIMIZER_VERSION.to_le_bytes())?;
        for v in [self.config.beta1, self.config.beta2, self.config.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for (m, v) in self.m.iter().zip(&self.v) {
            w.write_all(&(m.len() as u32).to_le_bytes())?;
            for x in m.iter().chain(v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a state written by [`OptimizerState::write_to`] and checks it
    /// against the parameter layout of `net`.
    pub fn read_from(r: &mut impl Read, net: &Network<f32>, path: &Path) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        let mut buf4 = [0u8; 4];
        let mut read = |buf: &mut [u8]| {
            r.read_exact(buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::format(path, "optimizer section truncated")
                } else {
                    Error::io(path, e)
                }
            })
        };
        read(&mut buf4)?;
        if &buf4 != OPTIMIZER_MAGIC {
            return Err(Error::format(path, "missing optimizer section"));
        }
        let mut ver = [0u8; 2];
        read(&mut ver)?;
        if u16::from_le_bytes(ver) != OPTIMIZER_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported optimizer section version {}", u16::from_le_bytes(ver)),
            ));
        }
        let mut f = [0.0f64; 3];
        for v in &mut f {
            read(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
        read(&mut buf8)?;
        let step = u64::from_le_bytes(buf8);
        read(&mut buf4)?;
        let count = u32::from_le_bytes(buf4) as usize;
        let expected: Vec<usize> = net.parameter_slices().iter().map(|s| s.len()).collect();
        if count != expected.len() {
            return Err(Error::format(
                path,
                format!("optimizer has {count} buffers, network has {}", expected.len()),
            ));
        }
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for (i, &len) in expected.iter().enumerate() {
            read(&mut buf4)?;
            let got = u32::from_le_bytes(buf4) as usize;
            if got != len {
                return Err(Error::format(
                    path,
                    format!("optimizer buffer {i} has {got} values, expected {len}"),
                ));
            }
            let mut bytes = vec![0u8; 8 * len];
            read(&mut bytes)?;
            let vals: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            m.push(vals[..len].to_vec());
            v.push(vals[len..].to_vec());
        }
        Ok(OptimizerState {
            config: AdamConfig {
                beta1: f[0],
                beta2: f[1],
                epsilon: f[2],
            },
            step,
            m,
            v,
        })
    }
}
