mod common;

use fedshield::group::{P256Group, PrimeGroup, ToyGroup};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn homomorphism_holds<G: PrimeGroup>(g: &G, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = g.random_scalar(&mut rng);
    let b = g.random_scalar(&mut rng);
    let p = g.mul_generator(&g.random_scalar(&mut rng));
    // [a+b]P = [a]P + [b]P and [ab]G = [a]([b]G)
    assert_eq!(g.mul(&g.scalar_add(&a, &b), &p), g.add(&g.mul(&a, &p), &g.mul(&b, &p)));
    assert_eq!(g.mul_generator(&g.scalar_mul(&a, &b)), g.mul(&a, &g.mul_generator(&b)));
    assert_eq!(g.add(&p, &g.neg(&p)), g.identity());
}

fn encodings_round_trip<G: PrimeGroup>(g: &G, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = g.random_scalar(&mut rng);
    let p = g.mul_generator(&s);
    assert_eq!(g.decode_scalar(&g.encode_scalar(&s)).unwrap(), s);
    assert_eq!(g.decode_element(&g.encode_element(&p)).unwrap(), p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn toy_scalar_multiplication_is_a_homomorphism(seed in any::<u64>()) {
        homomorphism_holds(&ToyGroup::new(), seed);
    }

    #[test]
    fn p256_scalar_multiplication_is_a_homomorphism(seed in any::<u64>()) {
        homomorphism_holds(&P256Group, seed);
    }

    #[test]
    fn encodings_are_canonical(seed in any::<u64>()) {
        encodings_round_trip(&ToyGroup::new(), seed);
        encodings_round_trip(&P256Group, seed);
    }

    #[test]
    fn toy_exponentiation_matches_naive_power(k in 0u64..11) {
        let g = ToyGroup::new();
        prop_assert_eq!(g.mul_generator(&g.scalar(k)).value() as u64, common::pow_mod_naive(2, k, 23));
    }
}

#[test]
fn scalar_inverse_is_multiplicative_inverse() {
    let g = ToyGroup::new();
    for v in 1..11 {
        let s = g.scalar(v);
        assert_eq!(g.scalar_mul(&s, &g.scalar_inv(&s).unwrap()), g.scalar_one());
    }
    let p = P256Group;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let s = p.random_nonzero_scalar(&mut rng);
        assert_eq!(p.scalar_mul(&s, &p.scalar_inv(&s).unwrap()), p.scalar_one());
    }
}

#[test]
fn order_annihilates_generator() {
    let g = ToyGroup::new();
    // [q]G with q reduced is [0]G.
    assert_eq!(g.mul_generator(&g.scalar(11)), g.identity());
    assert_eq!(common::pow_mod_naive(2, 11, 23), 1);
}
