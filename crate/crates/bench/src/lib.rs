//! Fixture builders shared by the benchmarks.

use msnt_core::{Grid, LocalState, MixtureParams, Scheme, StepConfig, TrajectoryState};

/// Three-species mixture on `cells` cells with smooth opposing density gradients and a
/// temperature bump.
pub fn mixing_fixture(cells: usize, tau: f64) -> (Scheme, TrajectoryState) {
    let params = MixtureParams::uniform(vec![1.0, 2.0, 4.0], 1.0, 1.5).expect("valid mixture");
    let grid = Grid::new(cells, 1.0).expect("valid grid");
    let scheme = Scheme::new(params, grid, StepConfig::default().with_tau(tau)).expect("valid scheme");
    let states: Vec<LocalState> = grid
        .cell_centers()
        .iter()
        .map(|&x| {
            let s = (std::f64::consts::PI * x).cos();
            let bump = (-(x - 0.5) * (x - 0.5) / 0.02).exp();
            LocalState::new(vec![0.5 + 0.3 * s, 0.5 - 0.3 * s, 1.0], 1.0 + 0.5 * bump)
        })
        .collect();
    let state = scheme.initial_state(&states).expect("positive initial data");
    (scheme, state)
}
