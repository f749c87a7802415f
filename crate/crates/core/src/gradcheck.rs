//! Finite-difference checks of the autodiff engine and of gradients
//! through the solvers.

use crate::autodiff::{gradient, Tape, Tensor};
use crate::error::Result;
use crate::nn::Parameterized;
use crate::noise::{BrownianSample, InitialNoise, RandomStream, SeedSequence};
use crate::sdesolve::{
    combined_tensors, generate_path, solve_cde, DiscriminatorDims, DiscriminatorParams,
    GeneratorDims, GeneratorParams, Method, TimeGrid,
};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Differences below this are treated as exact agreement.
pub const ABS_TOL: f64 = 1e-8;

pub const FIRST_ORDER_CASES: usize = 100;
pub const FIRST_ORDER_TOL: f64 = 1e-6;
pub const SECOND_ORDER_CASES: usize = 20;
pub const SECOND_ORDER_TOL: f64 = 1e-4;
pub const SOLVER_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    /// Worst entrywise relative error seen.
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<Check>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {:<24} cases={:<3} worst_rel_err={:.3e} tol={:.0e}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.cases,
                    c.worst,
                    c.tolerance
                )
            })
            .collect()
    }
}

pub fn entry_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d < ABS_TOL {
        0.0
    } else {
        d / analytic.abs().max(numeric.abs())
    }
}

/// Worst entry error between `f`'s reverse-mode gradient and central
/// differences of `f`, over every entry of every input.
pub fn compare_with_fd(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&leaves)?;
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let grads = gradient(&out, &refs, false)?;
    let numeric = fd_gradient(&|x| f(x)?.item(), inputs)?;
    Ok(worst(&grads, &numeric))
}

/// Central differences of a scalar function of detached inputs.
pub fn fd_gradient(f: &dyn Fn(&[Tensor]) -> Result<f64>, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].numel()];
        for (j, gj) in g.iter_mut().enumerate() {
            let x = inputs[k].data()[j];
            work[k].data_mut()[j] = x + FD_STEP;
            let up = f(&work)?;
            work[k].data_mut()[j] = x - FD_STEP;
            let down = f(&work)?;
            work[k].data_mut()[j] = x;
            *gj = (up - down) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    Ok(out)
}

fn worst(analytic: &[Tensor], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n).map(|(a, n)| entry_error(*a, *n)))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut RandomStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn random(shape: &[usize], rng: &mut RandomStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(rng, -2.0, 2.0)).collect()).expect("sized")
}

/// Values bounded away from zero, for denominators.
fn nonzero(shape: &[usize], rng: &mut RandomStream) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.5 + 0.75 * v.abs());
    }
    t
}

fn positive(shape: &[usize], rng: &mut RandomStream) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = 0.5 + 0.375 * (*v + 2.0);
    }
    t
}

type Primitive = fn(&[Tensor]) -> Result<Tensor>;

/// Name, input generator and forward function of every primitive.
fn primitives() -> Vec<(&'static str, fn(&mut RandomStream) -> Vec<Tensor>, Primitive)> {
    fn dims(rng: &mut RandomStream) -> (usize, usize) {
        (1 + rng.below(3), 1 + rng.below(4))
    }
    vec![
        ("add", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), random(&[a, b], r)] }, |x| x[0].add(&x[1])),
        ("sub", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), random(&[a, b], r)] }, |x| x[0].sub(&x[1])),
        ("mul", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), random(&[a, b], r)] }, |x| x[0].mul(&x[1])),
        ("div", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), nonzero(&[a, b], r)] }, |x| x[0].div(&x[1])),
        ("scalar_broadcast", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), random(&[1], r)] }, |x| x[0].mul(&x[1])),
        ("scale", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].scale(-1.7))),
        ("offset", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].offset(0.3).square())),
        ("tanh", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].tanh())),
        ("softplus", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].softplus())),
        ("sigmoid", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].sigmoid())),
        ("square", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].square())),
        ("sqrt", |r| { let (a, b) = dims(r); vec![positive(&[a, b], r)] }, |x| Ok(x[0].sqrt())),
        ("sum", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| Ok(x[0].sum())),
        ("mean", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| x[0].mean()),
        ("matmul", |r| { let (a, b) = dims(r); let k = 1 + r.below(3); vec![random(&[a, k], r), random(&[k, b], r)] }, |x| x[0].matmul(&x[1])),
        ("transpose", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| x[0].transpose()),
        ("concat", |r| { let (a, b) = dims(r); vec![random(&[a, b], r), random(&[a, 2], r)] }, |x| Tensor::concat(&[&x[0], &x[1]])),
        ("slice", |r| { let (a, _) = dims(r); vec![random(&[a, 4], r)] }, |x| x[0].slice(1, 3)),
        ("broadcast", |r| { let (_, b) = dims(r); vec![random(&[1, b], r)] }, |x| x[0].broadcast_to(&[3, x[0].cols()])),
        ("sum_to", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| x[0].sum_to(&[x[0].rows(), 1])),
        ("reshape", |r| { let (a, b) = dims(r); vec![random(&[a, b], r)] }, |x| x[0].reshape(&[x[0].numel()])),
        ("bmv", |r| { let b = 1 + r.below(3); vec![random(&[b, 6], r), random(&[b, 3], r)] }, |x| x[0].bmv(&x[1], 2, 3)),
        ("bmtv", |r| { let b = 1 + r.below(3); vec![random(&[b, 6], r), random(&[b, 2], r)] }, |x| x[0].bmtv(&x[1], 2, 3)),
        ("bouter", |r| { let b = 1 + r.below(3); vec![random(&[b, 2], r), random(&[b, 3], r)] }, |x| x[0].bouter(&x[1])),
    ]
}

/// Weighted sum `sum(out * w)` with fixed weights, so every output entry
/// contributes a distinct amount.
fn scalarize(out: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = SeedSequence::new(seed).stream("gradcheck/weights", &[out.numel() as u64]);
    let w = random(out.shape(), &mut rng);
    Ok(out.mul(&w)?.sum())
}

/// First-order checks: the cases are spread round-robin over primitives,
/// one `Check` per primitive.
pub fn first_order(seed: u64) -> Result<Vec<Check>> {
    let prims = primitives();
    let seq = SeedSequence::new(seed);
    let mut checks: Vec<Check> = prims
        .iter()
        .map(|(name, _, _)| Check {
            name: format!("grad/{name}"),
            cases: 0,
            worst: 0.0,
            tolerance: FIRST_ORDER_TOL,
        })
        .collect();
    for case in 0..FIRST_ORDER_CASES {
        let k = case % prims.len();
        let (_, gen, fwd) = prims[k];
        let mut rng = seq.stream("gradcheck/first", &[case as u64]);
        let inputs = gen(&mut rng);
        let f = move |x: &[Tensor]| scalarize(&fwd(x)?, seed);
        let err = compare_with_fd(&f, &inputs)?;
        checks[k].cases += 1;
        checks[k].worst = checks[k].worst.max(err);
    }
    Ok(checks)
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Tanh,
    Softplus,
    Sigmoid,
    Square,
    Matmul,
    TimesInput,
    Bmv,
}

fn apply(step: Step, h: &Tensor, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    match step {
        Step::Tanh => Ok(h.tanh()),
        Step::Softplus => Ok(h.softplus()),
        Step::Sigmoid => Ok(h.sigmoid()),
        Step::Square => Ok(h.scale(0.5).square()),
        Step::Matmul => h.matmul(w),
        Step::TimesInput => h.mul(x),
        // each row of [h, h] read as a 2x3 matrix applied to the row of x
        Step::Bmv => {
            let v = Tensor::concat(&[h, h])?.bmv(x, 2, 3)?;
            Tensor::concat(&[&v, &h.slice(0, 1)?])
        }
    }
}

/// Second-order checks on random composites of up to five primitives:
/// the Hessian-vector product from tape-on-tape differentiation against
/// central differences of the first gradient.
pub fn second_order(seed: u64) -> Result<Check> {
    const STEPS: [Step; 7] = [
        Step::Tanh,
        Step::Softplus,
        Step::Sigmoid,
        Step::Square,
        Step::Matmul,
        Step::TimesInput,
        Step::Bmv,
    ];
    let seq = SeedSequence::new(seed);
    let mut worst_err: f64 = 0.0;
    for case in 0..SECOND_ORDER_CASES {
        let mut rng = seq.stream("gradcheck/second", &[case as u64]);
        let len = 2 + rng.below(4);
        let chain: Vec<Step> = (0..len).map(|_| STEPS[rng.below(STEPS.len())]).collect();
        let x = random(&[2, 3], &mut rng).scale(0.5);
        let w = random(&[3, 3], &mut rng).scale(0.5);
        let r2 = random(&[2, 3], &mut rng);
        let forward = |x: &Tensor| -> Result<Tensor> {
            let mut h = x.clone();
            for &s in &chain {
                h = apply(s, &h, x, &w)?;
            }
            scalarize(&h, seed)
        };
        // s(x) = <grad f(x), r2>
        let s_of = |x: &Tensor, create_graph: bool| -> Result<Tensor> {
            let g = gradient(&forward(x)?, &[x], create_graph)?;
            Ok(g[0].mul(&r2)?.sum())
        };
        let tape = Tape::new();
        let xl = tape.leaf(&x);
        let analytic = gradient(&s_of(&xl, true)?, &[&xl], false)?;
        let numeric = fd_gradient(
            &|inp| {
                let t = Tape::new();
                let xl = t.leaf(&inp[0]);
                s_of(&xl, false)?.item()
            },
            std::slice::from_ref(&x),
        )?;
        worst_err = worst_err.max(worst(&analytic, &numeric));
    }
    Ok(Check {
        name: "second_order".into(),
        cases: SECOND_ORDER_CASES,
        worst: worst_err,
        tolerance: SECOND_ORDER_TOL,
    })
}

/// A tiny generator/discriminator pair: x = h = 2, y = 1, three steps.
pub struct TinyProblem {
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub grid: TimeGrid,
    pub v: Tensor,
    pub dw: Vec<Tensor>,
}

impl TinyProblem {
    pub fn new(seed: u64) -> Result<Self> {
        let seq = SeedSequence::new(seed);
        let mut rng = seq.stream("gradcheck/solver", &[]);
        let gen = GeneratorParams::new(
            GeneratorDims { v: 2, w: 2, x: 2, y: 1, width: 3, depth: 1 },
            &mut rng,
        )?;
        let disc = DiscriminatorParams::new(DiscriminatorDims { y: 1, h: 2, width: 3, depth: 1 }, &mut rng)?;
        let grid = TimeGrid::uniform(4, 1.5)?;
        let v = InitialNoise::draw(&mut rng, 2, 2)?.tensor();
        let dw = BrownianSample::draw(&mut rng, grid.times(), 2, 2)?.tensors();
        Ok(TinyProblem { gen, disc, grid, v, dw })
    }

    fn split<'a>(&self, p: &'a [Tensor]) -> (&'a [Tensor], &'a [Tensor]) {
        p.split_at(self.gen.params().len())
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.gen.param_tensors().into_iter().cloned().collect();
        p.extend(self.disc.param_tensors().into_iter().cloned());
        p
    }

    pub fn combined_score(&self, p: &[Tensor]) -> Result<Tensor> {
        let (gp, dp) = self.split(p);
        let gen = self.gen.with_tensors(gp)?;
        let disc = self.disc.with_tensors(dp)?;
        let (_, d) = combined_tensors(&gen, &disc, &self.v, &self.dw, &self.grid, Method::Midpoint)?;
        Ok(d.sum())
    }

    pub fn sequential_score(&self, p: &[Tensor]) -> Result<Tensor> {
        let (gp, dp) = self.split(p);
        let gen = self.gen.with_tensors(gp)?;
        let disc = self.disc.with_tensors(dp)?;
        let ys = generate_path(&gen, &self.v, &self.dw, &self.grid, Method::Midpoint)?;
        Ok(solve_cde(&disc, &ys, &self.grid, Method::Midpoint)?.sum())
    }
}

/// Gradient of the discriminator score with respect to every generator
/// and discriminator parameter, through both solve routes.
pub fn solver(seed: u64) -> Result<Vec<Check>> {
    let prob = TinyProblem::new(seed)?;
    let params = prob.params();
    let combined = compare_with_fd(&|p| prob.combined_score(p), &params)?;
    let sequential = compare_with_fd(&|p| prob.sequential_score(p), &params)?;
    Ok(vec![
        Check {
            name: "solver/combined".into(),
            cases: 1,
            worst: combined,
            tolerance: SOLVER_TOL,
        },
        Check {
            name: "solver/sequential".into(),
            cases: 1,
            worst: sequential,
            tolerance: SOLVER_TOL,
        },
    ])
}

pub fn run(seed: u64) -> Result<GradcheckReport> {
    let mut checks = first_order(seed)?;
    checks.push(second_order(seed)?);
    checks.extend(solver(seed)?);
    Ok(GradcheckReport { checks })
}
