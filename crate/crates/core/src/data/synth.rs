//! Templated geometry word problems.

use super::{build_dataset, Dataset, ProblemClass, RawProblem};
use crate::grad::Rng;
use crate::optree::{format_number, FormulaRegistry, OpTree};

struct Template {
    class: ProblemClass,
    texts: &'static [&'static str],
    /// Infix over the placeholders `{a}` … `{d}`.
    equation: &'static str,
    /// Number values are sorted largest first.
    descending: bool,
}

const fn t(
    class: ProblemClass,
    texts: &'static [&'static str],
    equation: &'static str,
    descending: bool,
) -> Template {
    Template {
        class,
        texts,
        equation,
        descending,
    }
}

use ProblemClass::{Formula as F, NoFormula as N};

const TEMPLATES: &[Template] = &[
    t(F, &["A square has a side length of {a} {u}. What is its area?",
           "Each side of a square tile is {a} {u} long. Find the area of the tile."],
      "square_area({a})", false),
    t(F, &["A square garden has sides of {a} {u}. How long is the fence around it?",
           "Find the perimeter of a square whose side is {a} {u}."],
      "square_perimeter({a})", false),
    t(F, &["A cube has an edge of {a} {u}. What is its volume?",
           "How much space does a cubic box with an edge of {a} {u} take up?"],
      "cubic_volume({a})", false),
    t(F, &["A circle has a radius of {a} {u}. What is its area?",
           "A round pond has a radius of {a} {u}. How much ground does it cover?"],
      "circle_area({a})", false),
    t(F, &["A circle has a radius of {a} {u}. What is its circumference?",
           "A round track has a radius of {a} {u}. How long is one lap?"],
      "circumference_r({a})", false),
    t(F, &["A wheel has a diameter of {a} {u}. How far does it roll in one turn?",
           "Find the circumference of a circle with a diameter of {a} {u}."],
      "circumference_d({a})", false),
    t(F, &["A triangle has a base of {a} {u} and a height of {b} {u}. What is its area?",
           "The base of a triangular flag is {a} {u} and its height is {b} {u}. Find its area."],
      "triangle_area({a}, {b})", false),
    t(F, &["A rectangle is {a} {u} long and {b} {u} wide. What is its area?",
           "A rectangular field has a length of {a} {u} and a width of {b} {u}. How large is the field?"],
      "rectangle_area({a}, {b})", false),
    t(F, &["A rectangle is {a} {u} long and {b} {u} wide. What is its perimeter?",
           "How much fencing goes around a rectangular yard {a} {u} long and {b} {u} wide?"],
      "rectangle_perimeter({a}, {b})", false),
    t(F, &["A box is {a} {u} long, {b} {u} wide and {c} {u} high. What is its volume?",
           "A cuboid tank measures {a} {u} by {b} {u} by {c} {u}. How much water can it hold?"],
      "cuboid_volume({a}, {b}, {c})", false),
    t(F, &["A cuboid is {a} {u} long, {b} {u} wide and {c} {u} high. What is its surface area?",
           "How much paper covers all faces of a box {a} {u} long, {b} {u} wide and {c} {u} high?"],
      "cuboid_surface({a}, {b}, {c})", false),
    t(F, &["A ring has an outer radius of {a} {u} and an inner radius of {b} {u}. What is the area of the ring?",
           "A round lawn of radius {a} {u} has a round pond of radius {b} {u} in the middle. How much lawn is there?"],
      "circle_area({a}) - circle_area({b})", true),
    t(F, &["A wall is {a} {u} long and {b} {u} high. Each square {u} needs {c} grams of paint. How much paint is needed?"],
      "rectangle_area({a}, {b}) * {c}", false),
    t(F, &["A square pen has sides of {a} {u}. Fencing costs {b} dollars per {u}. What does the fence cost?"],
      "square_perimeter({a}) * {b}", false),
    t(F, &["One room is {a} {u} by {b} {u} and another is {c} {u} by {d} {u}. What is their total floor area?"],
      "rectangle_area({a}, {b}) + rectangle_area({c}, {d})", false),
    t(F, &["A triangular lawn has a base of {a} {u} and a height of {b} {u}. It is shared equally by {c} families. How much does each family get?"],
      "triangle_area({a}, {b}) / {c}", false),
    t(F, &["A runner goes around a round track with a radius of {a} {u} {b} times. How far does the runner go?"],
      "circumference_r({a}) * {b}", false),
    t(N, &["The circular pool is {a} {u} around. Walking {b} {u} per minute, how many minutes does one lap take?",
           "A square playground is {a} {u} around. A child walks {b} {u} each minute. How many minutes does one lap take?"],
      "{a} / {b}", false),
    t(N, &["A round track is {a} {u} long. Lily runs {b} laps. How far does she run?"],
      "{a} * {b}", false),
    t(N, &["A rectangular field has an area of {a} square {u}. It is split into {b} equal plots. What is the area of each plot?"],
      "{a} / {b}", false),
    t(N, &["A square table costs {a} dollars and a round chair costs {b} dollars. What do they cost together?"],
      "{a} + {b}", false),
    t(N, &["A triangular flag has an area of {a} square {u}. A piece of {b} square {u} is cut off. How much is left?"],
      "{a} - {b}", true),
    t(N, &["The area of a rectangle is {a} square {u} and its length is {b} {u}. What is its width?"],
      "{a} / {b}", false),
    t(N, &["A cube-shaped box weighs {a} kg. How much do {b} such boxes weigh?"],
      "{a} * {b}", false),
    t(N, &["The circumference of a circle is {a} {u}. What is its diameter?"],
      "{a} / 3.14", false),
    t(N, &["The perimeter of a rectangle is {a} {u} and its length is {b} {u}. What is its width?"],
      "{a} / 2 - {b}", true),
    t(N, &["A circular garden has {a} rose bushes and {b} tulip beds. How many plantings are there in all?"],
      "{a} + {b}", false),
    t(N, &["A rectangular box holds {a} pencils and {b} are taken out. How many pencils remain?"],
      "{a} - {b}", true),
];

const UNITS: &[&str] = &["m", "cm", "dm"];
const PLACEHOLDERS: [&str; 4] = ["{a}", "{b}", "{c}", "{d}"];
const FORMULA_SHARE: f64 = 0.6;

fn fill(s: &str, values: &[f64], unit: &str) -> String {
    let mut out = s.replace("{u}", unit);
    for (p, v) in PLACEHOLDERS.iter().zip(values) {
        out = out.replace(p, &format_number(*v));
    }
    out
}

/// `n` problems: 60% of them (in expectation) need a formula. Numbers are
/// distinct integers in `[1, 50]`; answers come from evaluating the
/// equation. Output depends only on `n` and `seed`.
pub fn synth_problems(n: usize, seed: u64, reg: &FormulaRegistry) -> Vec<RawProblem> {
    let formula: Vec<&Template> = TEMPLATES.iter().filter(|t| t.class == F).collect();
    let plain: Vec<&Template> = TEMPLATES.iter().filter(|t| t.class == N).collect();
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let pool = if rng.bernoulli(FORMULA_SHARE) { &formula } else { &plain };
            let tpl = *rng.choose(pool);
            let count = PLACEHOLDERS.iter().filter(|p| tpl.equation.contains(*p)).count();
            // Values equal to a constant the equation spells out would be
            // copied from the text instead.
            let reserved: &[f64] = if tpl.equation.contains("/ 2") { &[2.0] } else { &[] };
            let mut values: Vec<f64> = Vec::with_capacity(count);
            while values.len() < count {
                let v = rng.int(1, 50) as f64;
                if !values.contains(&v) && !reserved.contains(&v) {
                    values.push(v);
                }
            }
            if tpl.descending {
                values.sort_by(|a, b| b.total_cmp(a));
            }
            let unit = *rng.choose(UNITS);
            let text = fill(rng.choose(tpl.texts), &values, unit);
            let equation = fill(tpl.equation, &values, unit);
            let answer = OpTree::parse_infix(&equation, reg)
                .expect("templates parse")
                .evaluate(reg, &[])
                .expect("template equations evaluate");
            RawProblem {
                id: format!("syn-{i:05}"),
                text,
                equation,
                answer,
                class: Some(tpl.class),
            }
        })
        .collect()
}

pub fn synth_generate(n: usize, seed: u64, reg: &FormulaRegistry, max_slots: usize) -> Dataset {
    build_dataset(&synth_problems(n, seed, reg), reg, max_slots)
}
