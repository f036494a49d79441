//! BB84 key exchange on the statevector simulator, and one-time-pad XOR.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Gate, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Computational basis: |0>, |1>.
    Z,
    /// Hadamard basis: |+>, |->.
    X,
}

impl Basis {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.gen::<bool>() {
            Basis::X
        } else {
            Basis::Z
        }
    }
}

/// Prepares `bit` in `basis` on a single qubit.
fn prepare(bit: bool, basis: Basis) -> StateVector {
    let mut s = StateVector::zero(1).expect("one qubit");
    if bit {
        s.apply_gate_in_place(&Gate::X(0));
    }
    if basis == Basis::X {
        s.apply_gate_in_place(&Gate::H(0));
    }
    s
}

/// Projective measurement in `basis`, sampled with `rng`.
fn measure<R: Rng + ?Sized>(state: &StateVector, basis: Basis, rng: &mut R) -> bool {
    let mut s = state.clone();
    if basis == Basis::X {
        s.apply_gate_in_place(&Gate::H(0));
    }
    s.measure(rng) == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bb84Options {
    pub eavesdrop: bool,
    /// Fraction of sifted bits disclosed to estimate the QBER.
    pub check_fraction: f64,
    pub abort_threshold: f64,
    /// Test hook: the receiver always picks the sender's basis.
    #[serde(skip)]
    pub force_matching_bases: bool,
}

impl Default for Bb84Options {
    fn default() -> Self {
        Self { eavesdrop: false, check_fraction: 0.1, abort_threshold: 0.15, force_matching_bases: false }
    }
}

impl Bb84Options {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.check_fraction) {
            return Err(Error::invalid("check_fraction", format!("must be in [0, 0.5), got {}", self.check_fraction)));
        }
        if !(0.0..=1.0).contains(&self.abort_threshold) {
            return Err(Error::invalid("abort_threshold", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One qubit's journey through the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub sender_bit: bool,
    pub sender_basis: Basis,
    pub receiver_basis: Basis,
    pub receiver_bit: bool,
}

impl Transmission {
    pub fn bases_match(&self) -> bool {
        self.sender_basis == self.receiver_basis
    }
}

/// Sends `count` qubits: random bits and bases from the sender, an optional
/// intercept-resend attacker, and random-basis measurement at the receiver.
pub fn transmit<R: Rng + ?Sized>(count: usize, options: &Bb84Options, rng: &mut R) -> Vec<Transmission> {
    (0..count)
        .map(|_| {
            let sender_bit = rng.gen::<bool>();
            let sender_basis = Basis::random(rng);
            let mut qubit = prepare(sender_bit, sender_basis);
            if options.eavesdrop {
                let eve_basis = Basis::random(rng);
                let seen = measure(&qubit, eve_basis, rng);
                qubit = prepare(seen, eve_basis);
            }
            let receiver_basis = if options.force_matching_bases { sender_basis } else { Basis::random(rng) };
            let receiver_bit = measure(&qubit, receiver_basis, rng);
            Transmission { sender_bit, sender_basis, receiver_basis, receiver_bit }
        })
        .collect()
}

/// Keys agreed by one exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPair {
    pub sender_key: Vec<bool>,
    pub receiver_key: Vec<bool>,
    pub sifted_length: usize,
    /// Error rate over the disclosed check bits (0 when none were checked).
    pub qber: f64,
    pub check_bits: usize,
    pub raw_bits_sent: usize,
}

/// Runs BB84 batches until `required_bits` sifted, unchecked bits exist,
/// then truncates both keys to that length.
///
/// Each batch sends 4× the still-missing bit count. Within a batch a
/// `check_fraction` share of the sifted positions (chosen at random) is
/// disclosed for error estimation. Fails with [`Error::KeyCompromised`] when
/// the QBER over all check bits exceeds the abort threshold.
pub fn bb84_exchange<R: Rng + ?Sized>(required_bits: usize, options: &Bb84Options, rng: &mut R) -> Result<KeyPair> {
    if required_bits < 1 {
        return Err(Error::invalid("required_bits", "must be >= 1"));
    }
    options.validate()?;

    let mut sender_key = Vec::with_capacity(required_bits);
    let mut receiver_key = Vec::with_capacity(required_bits);
    let (mut checked, mut errors, mut raw) = (0usize, 0usize, 0usize);

    while sender_key.len() < required_bits {
        let missing = required_bits - sender_key.len();
        let batch = transmit(4 * missing, options, rng);
        raw += batch.len();
        let sifted: Vec<&Transmission> = batch.iter().filter(|t| t.bases_match()).collect();
        let n_check = (options.check_fraction * sifted.len() as f64).floor() as usize;
        let mut is_check = vec![false; sifted.len()];
        for i in sample(rng, sifted.len(), n_check) {
            is_check[i] = true;
        }
        for (t, check) in sifted.iter().zip(is_check) {
            if check {
                checked += 1;
                errors += usize::from(t.sender_bit != t.receiver_bit);
            } else {
                sender_key.push(t.sender_bit);
                receiver_key.push(t.receiver_bit);
            }
        }
    }
    sender_key.truncate(required_bits);
    receiver_key.truncate(required_bits);

    let qber = if checked == 0 { 0.0 } else { errors as f64 / checked as f64 };
    if qber > options.abort_threshold {
        return Err(Error::KeyCompromised { qber, threshold: options.abort_threshold });
    }
    Ok(KeyPair {
        sifted_length: sender_key.len(),
        sender_key,
        receiver_key,
        qber,
        check_bits: checked,
        raw_bits_sent: raw,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherBlob {
    pub ciphertext: Vec<u8>,
    pub bit_length: usize,
}

fn key_byte(key: &[bool], byte_index: usize) -> u8 {
    key[byte_index * 8..byte_index * 8 + 8].iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b))
}

fn xor_with_key(data: &[u8], key: &[bool]) -> Result<Vec<u8>> {
    let needed = data.len() * 8;
    if key.len() < needed {
        return Err(Error::KeyTooShort { needed, available: key.len() });
    }
    Ok(data.iter().enumerate().map(|(i, b)| b ^ key_byte(key, i)).collect())
}

/// XORs `plain` with the key, consuming key bits MSB-first within each byte.
pub fn otp_encrypt(plain: &[u8], key: &[bool]) -> Result<CipherBlob> {
    Ok(CipherBlob { ciphertext: xor_with_key(plain, key)?, bit_length: plain.len() * 8 })
}

pub fn otp_decrypt(blob: &CipherBlob, key: &[bool]) -> Result<Vec<u8>> {
    if key.len() < blob.bit_length {
        return Err(Error::KeyTooShort { needed: blob.bit_length, available: key.len() });
    }
    xor_with_key(&blob.ciphertext, key)
}

/// Packs bits MSB-first into bytes; a trailing partial byte is zero-padded.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))).collect()
}
