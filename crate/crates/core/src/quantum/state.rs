use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register accepted by [`StateVector::new`].
pub const MAX_QUBITS: usize = 20;

/// Exact amplitudes of an n-qubit register.
///
/// Basis ordering is big-endian in qubit index: qubit 0 is the most
/// significant bit of the amplitude index, so `|10⟩` (qubit 0 set) lives at
/// index 2.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// The all-zeros state `|0…0⟩`.
    pub fn new(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Invalid(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Bit mask selecting `qubit` in an amplitude index.
    pub(crate) fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Circuit(format!(
                "qubit {qubit} out of range for {}-qubit register",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Applies a 2x2 matrix `[[a, b], [c, d]]` to `qubit`.
    pub(crate) fn apply_single(
        &mut self,
        qubit: usize,
        [a, b, c, d]: [Complex64; 4],
    ) -> Result<()> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        for i0 in 0..self.amps.len() {
            if i0 & mask != 0 {
                continue;
            }
            let i1 = i0 | mask;
            let (x0, x1) = (self.amps[i0], self.amps[i1]);
            self.amps[i0] = a * x0 + b * x1;
            self.amps[i1] = c * x0 + d * x1;
        }
        Ok(())
    }

    pub fn rx(&mut self, qubit: usize, theta: f64) -> Result<()> {
        let (s, c) = (theta / 2.0).sin_cos();
        let (c, ms) = (Complex64::new(c, 0.0), Complex64::new(0.0, -s));
        self.apply_single(qubit, [c, ms, ms, c])
    }

    pub fn ry(&mut self, qubit: usize, theta: f64) -> Result<()> {
        let (s, c) = (theta / 2.0).sin_cos();
        let (c, s) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
        self.apply_single(qubit, [c, -s, s, c])
    }

    pub fn rz(&mut self, qubit: usize, theta: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        let (s, c) = (theta / 2.0).sin_cos();
        let lo = Complex64::new(c, -s);
        let hi = Complex64::new(c, s);
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & mask == 0 { lo } else { hi };
        }
        Ok(())
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::Circuit(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        let (cm, tm) = (self.mask(control), self.mask(target));
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
        Ok(())
    }

    /// `⟨Z⟩` on `qubit`, clamped to `[-1, 1]` against rounding.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        let e: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum();
        Ok(e.clamp(-1.0, 1.0))
    }
}

/// `init_state`: the register `|0…0⟩`.
pub fn init_state(n_qubits: usize) -> Result<StateVector> {
    StateVector::new(n_qubits)
}
