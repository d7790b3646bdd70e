//! Seeded fixtures for the benchmarks.

use mixfact::testing::{dataset_with_missing, random_factor_model, random_gg};
use mixfact::{BitMask, FactorModel, GGParams, MixedDataset, ParamVector, Schema};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture<M> {
    pub model: M,
    pub draws: Vec<(DVector<f64>, BitMask)>,
    /// Fully observed rows.
    pub complete: MixedDataset,
    /// Same rows with 20% of cells missing and counts up to 3.
    pub missing: MixedDataset,
    pub params: ParamVector,
}

fn complete(draws: &[(DVector<f64>, BitMask)], p_x: usize, q: usize) -> MixedDataset {
    let x = draws.iter().map(|(x, _)| x.iter().map(|v| Some(*v)).collect()).collect();
    let y = draws.iter().map(|(_, y)| y.to_bools().into_iter().map(Some).collect()).collect();
    MixedDataset::from_rows(Schema::default_names(p_x, q), x, y).expect("consistent rows")
}

pub fn factor_fixture(p_x: usize, q: usize, p_z: usize, n: usize, seed: u64) -> Fixture<FactorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_factor_model(&mut rng, p_x, q, p_z);
    let draws = model.sample_with(n, &mut rng).expect("valid model");
    let missing = dataset_with_missing(&mut rng, &draws, 0.2, 3);
    Fixture {
        params: ParamVector::pack_factor(&model).expect("valid model"),
        complete: complete(&draws, p_x, q),
        missing,
        draws,
        model,
    }
}

pub fn gg_fixture(p: usize, q: usize, n: usize, seed: u64) -> Fixture<GGParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_gg(&mut rng, p, q);
    let draws = model.sample_with(n, &mut rng).expect("valid model");
    let missing = dataset_with_missing(&mut rng, &draws, 0.2, 3);
    Fixture {
        params: ParamVector::pack_gg(&model, false).expect("valid model"),
        complete: complete(&draws, p, q),
        missing,
        draws,
        model,
    }
}
