use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Inverted dropout. When `active`, each element survives with probability
/// `1 - p` and survivors are scaled by `1 / (1 - p)`; the returned mask holds
/// that per-element multiplier. When inactive the input passes through and
/// `rng` is not touched.
pub fn dropout<F: Real, R: RngCore + ?Sized>(
    input: &Tensor<F>,
    p: f64,
    active: bool,
    rng: &mut R,
) -> Result<(Tensor<F>, Vec<F>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(alloc::format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !active || p == 0.0 {
        return Ok((input.clone(), alloc::vec![F::one(); input.len()]));
    }
    let scale = F::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..input.len())
        .map(|_| if rng.random::<f64>() >= p { scale } else { F::zero() })
        .collect();
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o = *o * m;
    }
    Ok((out, mask))
}

pub fn dropout_backward<F: Real>(grad_out: &Tensor<F>, mask: &[F]) -> Tensor<F> {
    let mut g = grad_out.clone();
    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
        *v = *v * m;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Untouchable;
    impl RngCore for Untouchable {
        fn next_u32(&mut self) -> u32 {
            panic!("rng consulted")
        }
        fn next_u64(&mut self) -> u64 {
            panic!("rng consulted")
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {
            panic!("rng consulted")
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let x = Tensor::<f64>::new(&[3], alloc::vec![1.0, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, mask) = dropout(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn inactive_never_consults_rng() {
        let x = Tensor::<f64>::filled(&[8], 1.5);
        let (y, _) = dropout(&x, 0.5, false, &mut Untouchable).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn survivors_are_rescaled() {
        let x = Tensor::<f64>::filled(&[1000], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, _) = dropout(&x, 0.5, true, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn rate_one_is_rejected() {
        let x = Tensor::<f64>::filled(&[2], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }
}
