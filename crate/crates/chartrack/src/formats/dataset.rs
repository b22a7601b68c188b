//! Channel dataset files.
//!
//! Header (40 bytes): magic `CHDS`, version `u32 = 1`, `N_B u32`, `N_U u32`,
//! sample count `u64`, carrier in Hz `f64`, 8 reserved zero bytes. Each
//! record is the position as three `f64` followed by `H` column-major as
//! `(re, im)` pairs of `f64`.

use std::path::Path;

use chartrack_core::channel::ChannelSample;
use chartrack_core::{CMatrix, Complex64};

use super::{read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CHDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nb: usize,
    pub nu: usize,
    pub carrier: f64,
    pub samples: Vec<ChannelSample>,
}

impl Dataset {
    pub fn record_len(nb: usize, nu: usize) -> usize {
        8 * (3 + 2 * nb * nu)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.h.shape() != (self.nb, self.nu) {
                return Err(Error::Config(format!(
                    "sample {i} is {:?}, dataset is {}x{}",
                    s.h.shape(),
                    self.nb,
                    self.nu
                )));
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.samples.len() * Self::record_len(self.nb, self.nu));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nb as u32).to_le_bytes());
        out.extend_from_slice(&(self.nu as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.carrier.to_le_bytes());
        out.extend_from_slice(&[0u8; 8]);
        for s in &self.samples {
            for x in s.position {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for z in s.h.as_slice() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(path: &Path, buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, buf);
        if r.bytes(4, "magic")? != MAGIC {
            return Err(r.fail(0, "bad magic, expected CHDS"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        let nb = r.u32("N_B")? as usize;
        let nu = r.u32("N_U")? as usize;
        if nb == 0 || nu == 0 {
            return Err(r.fail(8, "array sizes must be nonzero"));
        }
        let k = r.u64("sample count")?;
        let carrier = r.f64("carrier")?;
        r.bytes(8, "reserved")?;
        let rec = Self::record_len(nb, nu) as u64;
        let expect = k.checked_mul(rec).filter(|&n| n == r.remaining() as u64);
        if expect.is_none() {
            return Err(r.fail(
                r.offset(),
                format!("{k} records of {rec} bytes do not match the {} bytes left", r.remaining()),
            ));
        }
        let mut samples = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let start = r.offset();
            let position = [r.f64("position")?, r.f64("position")?, r.f64("position")?];
            let mut h = Vec::with_capacity(nb * nu);
            for _ in 0..nb * nu {
                h.push(Complex64::new(r.f64("channel")?, r.f64("channel")?));
            }
            if !position.iter().all(|x| x.is_finite()) || !h.iter().all(|z| z.is_finite()) {
                return Err(r.fail(start, "record contains non-finite values"));
            }
            let h = CMatrix::new(nb, nu, h).map_err(|e| r.fail(start, e.to_string()))?;
            samples.push(ChannelSample { h, position });
        }
        Ok(Self {
            nb,
            nu,
            carrier,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}
