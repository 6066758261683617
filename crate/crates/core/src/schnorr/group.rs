use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use super::SchnorrError;

/// Miller–Rabin rounds used for every primality decision.
pub const MILLER_RABIN_ROUNDS: usize = 64;

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Probabilistic primality test: trial division by small primes, then
/// `rounds` Miller–Rabin rounds with random bases.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Public group description: `p`, prime `q | p − 1`, and `g` of order `q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
}

impl GroupParams {
    /// Checks the structural invariants. Primality of `p` and `q` is checked
    /// separately by [`GroupParams::check_primes`].
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self, SchnorrError> {
        let one = BigUint::one();
        if q <= one || p <= BigUint::from(2u32) {
            return Err(SchnorrError::InvalidGroup("p and q must exceed 2 and 1"));
        }
        if !(&p - 1u32).is_multiple_of(&q) {
            return Err(SchnorrError::InvalidGroup("q does not divide p - 1"));
        }
        if g <= one || g >= p {
            return Err(SchnorrError::InvalidGroup("g outside (1, p)"));
        }
        if !g.modpow(&q, &p).is_one() {
            return Err(SchnorrError::InvalidGroup("g^q != 1 mod p"));
        }
        Ok(GroupParams { p, q, g })
    }

    pub fn check_primes<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(), SchnorrError> {
        if !is_probable_prime(&self.p, MILLER_RABIN_ROUNDS, rng) {
            return Err(SchnorrError::InvalidGroup("p is not prime"));
        }
        if !is_probable_prime(&self.q, MILLER_RABIN_ROUNDS, rng) {
            return Err(SchnorrError::InvalidGroup("q is not prime"));
        }
        Ok(())
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    /// Bit length of the subgroup order.
    pub fn q_bits(&self) -> u64 {
        self.q.bits()
    }

    /// Uniform in `[1, q − 1]`.
    pub(crate) fn random_nonzero_exponent<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        rng.gen_biguint_range(&BigUint::one(), &self.q)
    }
}

fn random_with_top_bit<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    let mut n = rng.gen_biguint(bits);
    n.set_bit(bits - 1, true);
    n
}

const PRIME_SEARCH_LIMIT: usize = 1 << 16;

fn find_prime<R, F>(rng: &mut R, mut candidate: F, bits: u64) -> Option<BigUint>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> BigUint,
{
    for _ in 0..PRIME_SEARCH_LIMIT {
        let c = candidate(rng);
        if c.bits() == bits && is_probable_prime(&c, MILLER_RABIN_ROUNDS, rng) {
            return Some(c);
        }
    }
    None
}

/// Generates `(p, q, g)` the FIPS 186 way: a random `q_bits` prime `q`, then
/// `p = k·q + 1` of exactly `p_bits` bits, then `g = h^((p−1)/q) ≠ 1`.
pub fn generate_params<R: Rng + ?Sized>(
    p_bits: u64,
    q_bits: u64,
    rng: &mut R,
) -> Result<GroupParams, SchnorrError> {
    if q_bits < 2 || q_bits >= p_bits {
        return Err(SchnorrError::ParamSizes { p_bits, q_bits });
    }
    for _ in 0..64 {
        let Some(q) = find_prime(rng, |rng| random_with_top_bit(q_bits, rng) | BigUint::one(), q_bits)
        else {
            continue;
        };
        let two_q = &q << 1;
        let Some(p) = find_prime(
            rng,
            |rng| {
                let x = random_with_top_bit(p_bits, rng);
                &x - (&x % &two_q) + 1u32
            },
            p_bits,
        ) else {
            continue;
        };
        let exp = (&p - 1u32) / &q;
        let mut h = BigUint::from(2u32);
        while h < p {
            let g = h.modpow(&exp, &p);
            if !g.is_one() {
                return GroupParams::new(p, q, g);
            }
            h += 1u32;
        }
    }
    Err(SchnorrError::ParamSearchExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn naive_prime(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
    }

    #[test]
    fn primality_agrees_with_trial_division() {
        let mut r = rng();
        for n in 0u64..3000 {
            assert_eq!(is_probable_prime(&BigUint::from(n), 16, &mut r), naive_prime(n), "n={n}");
        }
        // Carmichael numbers.
        for n in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(n), 16, &mut r));
        }
        let m127 = (BigUint::one() << 127) - 1u32;
        assert!(is_probable_prime(&m127, 16, &mut r));
        assert!(!is_probable_prime(&(&m127 + 2u32), 16, &mut r));
    }

    #[test]
    fn tiny_group_is_valid() {
        let g = GroupParams::new(23u32.into(), 11u32.into(), 2u32.into()).unwrap();
        assert_eq!(BigUint::from(2u32).modpow(&BigUint::from(11u32), &BigUint::from(23u32)), BigUint::one());
        g.check_primes(&mut rng()).unwrap();
    }

    #[test]
    fn rejects_broken_groups() {
        assert!(GroupParams::new(23u32.into(), 7u32.into(), 2u32.into()).is_err());
        assert!(GroupParams::new(23u32.into(), 11u32.into(), 5u32.into()).is_err());
        assert!(GroupParams::new(23u32.into(), 11u32.into(), 1u32.into()).is_err());
        assert!(GroupParams::new(23u32.into(), 11u32.into(), 23u32.into()).is_err());
        let composite = GroupParams::new(45u32.into(), 11u32.into(), 1u32.into());
        assert!(composite.is_err());
    }

    #[test]
    fn generated_params_satisfy_invariants() {
        let mut r = rng();
        for (pb, qb) in [(64, 32), (96, 40), (128, 64)] {
            let gp = generate_params(pb, qb, &mut r).unwrap();
            assert_eq!(gp.p().bits(), pb);
            assert_eq!(gp.q().bits(), qb);
            assert!(((gp.p() - 1u32) % gp.q()).is_zero());
            assert!(gp.g().modpow(gp.q(), gp.p()).is_one());
            gp.check_primes(&mut r).unwrap();
        }
    }

    #[test]
    fn generate_rejects_bad_sizes() {
        assert!(matches!(generate_params(64, 64, &mut rng()), Err(SchnorrError::ParamSizes { .. })));
        assert!(matches!(generate_params(64, 1, &mut rng()), Err(SchnorrError::ParamSizes { .. })));
    }
}
