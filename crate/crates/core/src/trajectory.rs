//! Recorded solution paths and their on-disk formats.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic   [u8; 4]  = b"SPDT"
//! version u32      = 1
//! nodes   u64      grid nodes per state (N + 2)
//! modes   u64      spectral truncation M
//! dt      f64      step of the underlying scheme
//! T       f64      last recorded time
//! seed    u64      noise seed
//! count   u64      number of records
//! count x { time f64, values [f64; nodes] }
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::noise::NoisePathSpec;
use crate::spectral::Field;

pub const BINARY_MAGIC: [u8; 4] = *b"SPDT";
pub const BINARY_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// Mode coefficients of each recorded state.
    pub coefficients: Vec<Vec<f64>>,
    pub noise_provenance: NoisePathSpec,
    /// Digest of the drift stack (reaction and perturbation) that produced it.
    pub drift_provenance: String,
    /// Scheme step; records may be sparser (see `stride`).
    pub dt: f64,
    pub stride: usize,
}

impl Trajectory {
    pub fn new(noise: NoisePathSpec, drift: String, dt: f64) -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            coefficients: Vec::new(),
            noise_provenance: noise,
            drift_provenance: drift,
            dt,
            stride: 1,
        }
    }

    pub fn push(&mut self, t: f64, state: Field, coeffs: Vec<f64>) {
        self.times.push(t);
        self.states.push(state);
        self.coefficients.push(coeffs);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("empty trajectory")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Index of the record at time `t` (within half a step), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 0.5 * self.dt;
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// `sup_t |X(t)|_E` over the records.
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(Field::sup_norm).fold(0.0, f64::max)
    }

    /// `sup_t |X(t) - Y(t)|_E` over common records.
    pub fn sup_gap(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).sup_norm())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let nodes = self.states.first().map_or(0, Field::len);
        write!(w, "time")?;
        for j in 0..nodes {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t:e}")?;
            for v in s.values() {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let nodes = self.states.first().map_or(0, Field::len) as u64;
        let modes = self.coefficients.first().map_or(0, Vec::len) as u64;
        w.write_all(&BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&nodes.to_le_bytes())?;
        w.write_all(&modes.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.final_time().to_le_bytes())?;
        w.write_all(&self.noise_provenance.seed.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (t, s) in self.times.iter().zip(&self.states) {
            w.write_all(&t.to_le_bytes())?;
            for v in s.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Parsed binary trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTrajectory {
    pub nodes: usize,
    pub modes: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinaryTrajectory> {
    let io = |e: std::io::Error| Error::Io {
        path: "<binary trajectory>".into(),
        message: e.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != BINARY_MAGIC {
        return Err(Error::InvalidArgument("bad trajectory magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(io)?;
    let version = u32::from_le_bytes(v);
    if version != BINARY_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported trajectory version {version}"
        )));
    }
    let nodes = read_u64(&mut r).map_err(io)? as usize;
    let modes = read_u64(&mut r).map_err(io)? as usize;
    let dt = read_f64(&mut r).map_err(io)?;
    let horizon = read_f64(&mut r).map_err(io)?;
    let seed = read_u64(&mut r).map_err(io)?;
    let count = read_u64(&mut r).map_err(io)? as usize;
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        times.push(read_f64(&mut r).map_err(io)?);
        let mut s = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            s.push(read_f64(&mut r).map_err(io)?);
        }
        states.push(s);
    }
    Ok(BinaryTrajectory {
        nodes,
        modes,
        dt,
        horizon,
        seed,
        times,
        states,
    })
}
