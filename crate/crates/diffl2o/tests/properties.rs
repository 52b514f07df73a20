//! Randomized invariants over the serialization formats and bound algebra.

use proptest::prelude::*;

use diff_l2o::bounds::gaussian_kl;
use diff_l2o::net::{Activation, DenoiserNet, InputLayout};
use diff_l2o::rngutil::rng_from_seed;
use diff_l2o::trajectory::{Provenance, Trajectory};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_kl_is_nonnegative(
        mu_hat in prop::collection::vec(-10.0f64..10.0, 1..6),
        shifts in prop::collection::vec(-10.0f64..10.0, 1..6),
        s_hat in prop::collection::vec(0.01f64..10.0, 1..6),
        s in prop::collection::vec(0.01f64..10.0, 1..6),
    ) {
        let k = mu_hat.len().min(shifts.len()).min(s_hat.len()).min(s.len());
        let mu: Vec<f64> = (0..k).map(|i| mu_hat[i] + shifts[i]).collect();
        let kl = gaussian_kl(&mu_hat[..k], &s_hat[..k], &mu, &s[..k]).unwrap();
        prop_assert!(kl >= -1e-12, "kl = {kl}");
    }

    #[test]
    fn trajectory_binary_round_trips(
        dim in 1usize..6,
        len in 1usize..10,
        seed in any::<u64>(),
        with_losses in any::<bool>(),
        raw in prop::collection::vec(-1e6f64..1e6, 60),
    ) {
        let states: Vec<Vec<f64>> = (0..len).map(|i| raw[i * dim..(i + 1) * dim].to_vec()).collect();
        let losses = with_losses.then(|| (0..len).map(|i| raw[50 + i % 10]).collect());
        let traj = Trajectory { states, provenance: Provenance::AnalyticRun, losses, seed };
        let mut bytes = Vec::new();
        traj.write_binary(&mut bytes).unwrap();
        let back = Trajectory::read_binary(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(traj.states, back.states);
        prop_assert_eq!(traj.losses, back.losses);
        prop_assert_eq!(traj.seed, back.seed);
        prop_assert_eq!(traj.provenance, back.provenance);
    }

    #[test]
    fn net_checkpoint_round_trips(seed in any::<u64>(), hidden in 1usize..20) {
        let layout = InputLayout { dim_x: 3, dim_g: 3, dim_temb: 4, dim_pemb: 0 };
        let net = diff_l2o::net::init_net(
            &[layout.total(), hidden, 3],
            Activation::SiLU,
            layout,
            &mut rng_from_seed(seed),
        )
        .unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        let back = DenoiserNet::read_checkpoint(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(net.params, back.params);
        prop_assert_eq!(net.layer_sizes, back.layer_sizes);
    }
}
