pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: &'static str,
}

macro_rules! fixture {
    ($name:literal, $summary:literal) => {
        Fixture {
            name: $name,
            summary: $summary,
            config: include_str!(concat!("../fixtures/", $name, ".cfg")),
        }
    };
}

pub const FIXTURES: &[Fixture] = &[
    fixture!("ex2_1", "planar P-matrix system with controls and a positive equilibrium"),
    fixture!("ex2_2", "two saturated equilibria, M not a P-matrix"),
    fixture!("ex5_1_uncontrolled", "predator-prey, positive equilibrium (53/80, 1/20)"),
    fixture!("ex5_1_controlled", "predator-prey, prey control 1/10 drives the predator out"),
    fixture!("ex5_1_controlled_03", "predator-prey, prey control 3/10"),
    fixture!("ex5_1_controlled_06", "predator-prey, prey control 3/5"),
    fixture!("ex5_2_a1", "competition, a = 1, species 2 excluded"),
    fixture!("ex5_2_controlled", "competition, a = 1, prey control 1/2"),
    fixture!("ex5_3_controlled", "exponential kernels, controls recover species 2"),
];

pub fn find(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_loads() {
        for f in FIXTURES {
            lvdelay::load_spec(f.config).unwrap_or_else(|e| panic!("{}: {e}", f.name));
        }
    }
}
