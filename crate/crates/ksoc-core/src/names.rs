//! Global coordinate naming convention.
//!
//! Every module exchanges expressions through these symbol names:
//! base coordinates `t1..tk`, cost accumulators `q0_1..q0_k`, states
//! `q1..qn`, controls `u1..ul`, velocities `v{i}_{A}`, momenta `p{A}_{i}`,
//! cost momenta `p{A}_0{B}` and multipliers `lam{alpha}`. Indices are
//! 1-based throughout.

pub fn time(a: usize) -> String {
    format!("t{a}")
}

pub fn extended_state(b: usize) -> String {
    format!("q0_{b}")
}

pub fn state(i: usize) -> String {
    format!("q{i}")
}

pub fn control(a: usize) -> String {
    format!("u{a}")
}

pub fn velocity(i: usize, a: usize) -> String {
    format!("v{i}_{a}")
}

pub fn momentum(a: usize, i: usize) -> String {
    format!("p{a}_{i}")
}

pub fn cost_momentum(a: usize, b: usize) -> String {
    format!("p{a}_0{b}")
}

pub fn multiplier(alpha: usize) -> String {
    format!("lam{alpha}")
}

/// Free vector-field components of the unified formalism, reserved for the
/// constraint algorithm: `D{A}_{a}` (control directions), `F{A}_{i}_{B}`
/// (velocity directions), `G{A}_{B}_{i}` (momentum directions).
pub fn comp_d(a_axis: usize, a_ctrl: usize) -> String {
    format!("D{a_axis}_{a_ctrl}")
}

pub fn comp_f(a_axis: usize, i: usize, b: usize) -> String {
    format!("F{a_axis}_{i}_{b}")
}

pub fn comp_g(a_axis: usize, b: usize, i: usize) -> String {
    format!("G{a_axis}_{b}_{i}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unambiguous() {
        // cost momenta use the 0-prefixed index, distinct from state momenta
        assert_eq!(momentum(1, 2), "p1_2");
        assert_eq!(cost_momentum(1, 2), "p1_02");
        assert_ne!(momentum(1, 2), cost_momentum(1, 2));
        assert_eq!(velocity(3, 2), "v3_2");
        assert_eq!(comp_g(2, 2, 3), "G2_2_3");
    }
}
