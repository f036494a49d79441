//! Device→server model protection: magnitude pruning, SVD compression with
//! QKD-keyed encryption of the singular values, rank-truncated
//! reconstruction, and federated averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{compose_svd, pairwise_sum, svd, Matrix};
use crate::qkd::{otp_decrypt, otp_encrypt, CipherBlob};
use crate::vqc::ParameterVector;

/// Rank kept by [`reconstruct`]: r = min(min(m1, m2), 2).
pub const MAX_KEPT_RANK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSpec {
    pub tau: f64,
    /// Blend the received global model with the local one instead of
    /// replacing it.
    pub avg_initial: bool,
}

impl Default for PruneSpec {
    fn default() -> Self {
        Self { tau: 0.5, avg_initial: false }
    }
}

impl PruneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("tau", format!("must be >= 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Zeroes every entry with |θ_i| < τ.
pub fn prune(theta: &ParameterVector, tau: f64) -> ParameterVector {
    theta.iter().map(|&t| if t.abs() < tau { 0.0 } else { t }).collect::<Vec<_>>().into()
}

/// (θ̄ + θ_current)/2 when `avg_initial`, else θ̄.
pub fn apply_global(current: &ParameterVector, global: &ParameterVector, avg_initial: bool) -> ParameterVector {
    if avg_initial {
        current.iter().zip(global.iter()).map(|(c, g)| (g + c) / 2.0).collect::<Vec<_>>().into()
    } else {
        global.clone()
    }
}

/// Reshapes θ row-major into m1 x m2 and decomposes it.
pub fn svd_split(theta: &ParameterVector, m1: usize, m2: usize) -> Result<(Matrix, Vec<f64>, Matrix)> {
    if m1 * m2 != theta.len() || m1 == 0 {
        return Err(Error::Dimension(format!("cannot reshape {} parameters into {m1}x{m2}", theta.len())));
    }
    let a = Matrix::from_vec(m1, m2, theta.to_vec())?;
    let s = svd(&a)?;
    Ok((s.u, s.sigma, s.vt))
}

/// Serialises each singular value as a big-endian IEEE-754 double and
/// encrypts the concatenation with the one-time pad.
pub fn encrypt_sigma(sigma: &[f64], key: &[bool]) -> Result<CipherBlob> {
    let plain: Vec<u8> = sigma.iter().flat_map(|s| s.to_be_bytes()).collect();
    otp_encrypt(&plain, key)
}

pub fn decrypt_sigma(blob: &CipherBlob, key: &[bool]) -> Result<Vec<f64>> {
    let plain = otp_decrypt(blob, key)?;
    if plain.len() % 8 != 0 {
        return Err(Error::Dimension(format!("{} plaintext bytes is not a whole number of f64", plain.len())));
    }
    Ok(plain.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// θ' = flatten(U · Σ' · Vt), where Σ' keeps only the top
/// min(min(m1, m2), 2) singular values.
pub fn reconstruct(u: &Matrix, sigma: &[f64], vt: &Matrix, m1: usize, m2: usize) -> Result<ParameterVector> {
    if u.rows() != m1 || u.cols() != m1 || vt.rows() != m2 || vt.cols() != m2 {
        return Err(Error::Dimension(format!(
            "U is {}x{}, Vt is {}x{}, expected {m1}x{m1} and {m2}x{m2}",
            u.rows(),
            u.cols(),
            vt.rows(),
            vt.cols()
        )));
    }
    if sigma.len() != m1.min(m2) {
        return Err(Error::Dimension(format!("{} singular values for a {m1}x{m2} matrix", sigma.len())));
    }
    let rank = m1.min(m2).min(MAX_KEPT_RANK);
    Ok(compose_svd(u, sigma, vt, rank).into_vec().into())
}

/// Elementwise mean of equal-length vectors.
///
/// Each coordinate's values are sorted before a pairwise sum, which makes
/// the result independent of device order.
pub fn federated_average(models: &[ParameterVector]) -> Result<ParameterVector> {
    let first = models.first().ok_or_else(|| Error::invalid("models", "cannot average an empty list"))?;
    let n = first.len();
    if let Some(bad) = models.iter().find(|m| m.len() != n) {
        return Err(Error::Dimension(format!("model of length {} among length-{n} models", bad.len())));
    }
    let k = models.len() as f64;
    let mean = (0..n)
        .map(|i| {
            let mut column: Vec<f64> = models.iter().map(|m| m[i]).collect();
            column.sort_by(f64::total_cmp);
            pairwise_sum(&column) / k
        })
        .collect::<Vec<_>>();
    Ok(mean.into())
}

/// What a device sends when SVD+QKD is on: clear U and Vt, encrypted σ.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdPackage {
    pub m1: usize,
    pub m2: usize,
    pub u: Matrix,
    pub vt: Matrix,
    pub sigma_cipher: CipherBlob,
}

impl SvdPackage {
    /// Splits θ and encrypts the singular values with `key`.
    pub fn seal(theta: &ParameterVector, m1: usize, m2: usize, key: &[bool]) -> Result<Self> {
        let (u, sigma, vt) = svd_split(theta, m1, m2)?;
        let sigma_cipher = encrypt_sigma(&sigma, key)?;
        Ok(Self { m1, m2, u, vt, sigma_cipher })
    }

    /// Decrypts σ with the receiver's key and rebuilds the rank-truncated θ'.
    pub fn open(&self, key: &[bool]) -> Result<ParameterVector> {
        let sigma = decrypt_sigma(&self.sigma_cipher, key)?;
        reconstruct(&self.u, &sigma, &self.vt, self.m1, self.m2)
    }

    /// Bits of key material needed for σ.
    pub fn key_bits(m1: usize, m2: usize) -> usize {
        64 * m1.min(m2)
    }

    /// Canonical encoding: m1, m2 (u64), row-major U (f64), ciphertext bit
    /// length (u64), ciphertext bytes, row-major Vt (f64); all big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.m1 as u64).to_be_bytes());
        out.extend_from_slice(&(self.m2 as u64).to_be_bytes());
        for v in self.u.as_slice() {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&(self.sigma_cipher.bit_length as u64).to_be_bytes());
        out.extend_from_slice(&self.sigma_cipher.ciphertext);
        for v in self.vt.as_slice() {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = ByteCursor { bytes, pos: 0 };
        let m1 = cursor.u64()? as usize;
        let m2 = cursor.u64()? as usize;
        if m1 == 0 || m2 == 0 || m1 > 1 << 16 || m2 > 1 << 16 {
            return Err(Error::Dimension(format!("implausible package dims {m1}x{m2}")));
        }
        let u = Matrix::from_vec(m1, m1, cursor.f64s(m1 * m1)?)?;
        let bit_length = cursor.u64()? as usize;
        let ciphertext = cursor.take(bit_length.div_ceil(8))?.to_vec();
        let vt = Matrix::from_vec(m2, m2, cursor.f64s(m2 * m2)?)?;
        if cursor.pos != bytes.len() {
            return Err(Error::Dimension(format!("{} trailing bytes in package", bytes.len() - cursor.pos)));
        }
        Ok(Self { m1, m2, u, vt, sigma_cipher: CipherBlob { ciphertext, bit_length } })
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Dimension("package truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
