//! Bundled experiment recipes.

pub struct Recipe {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! recipe {
    ($name:literal) => {
        Recipe {
            name: $name,
            text: include_str!(concat!("../recipes/", $name, ".toml")),
        }
    };
}

pub const RECIPES: [Recipe; 9] = [
    recipe!("fig5_theory"),
    recipe!("fig7_nphi1_sweep"),
    recipe!("nl_leakage"),
    recipe!("crosscoupling"),
    recipe!("pw_stress"),
    recipe!("g_sweep"),
    recipe!("cal_demo"),
    recipe!("twotone"),
    recipe!("dr_sweep"),
];

pub fn find(name: &str) -> Option<&'static Recipe> {
    RECIPES.iter().find(|r| r.name == name)
}
