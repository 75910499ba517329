use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use h2bem::discretization::TestCase;
use h2bem::hstruct::{to_dense, DenseMatrix, MatrixOperator};
use h2bem::kernel::{GalerkinAssembler, KernelKind};
use h2bem::mesh::SurfaceMesh;
use h2bem::solver::{run_level, Assembly, Compressed, Method, Params, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "h2bem", version, about = "Galerkin BEM for the Laplace equation with HCA and GCA compression")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a boundary value problem on a sequence of sphere meshes and
    /// report the errors.
    Convergence(ConvergenceArgs),
    /// Report setup time, storage and block ranks of the compressed operators.
    CompressBench(BenchArgs),
    /// Compare compressed operators with dense assembly.
    OracleCheck(OracleArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Interpolation order (HCA) or Green quadrature order (GCA).
    #[arg(long)]
    order: Option<usize>,
    /// Nearfield quadrature order.
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Admissibility parameter.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eps_aca: Option<f64>,
    /// Relative residual for CG.
    #[arg(long)]
    eps_solver: Option<f64>,
    #[arg(long)]
    max_it: Option<usize>,
}

impl Overrides {
    fn apply(&self, mut p: Params) -> Params {
        if let Some(v) = self.order {
            p.order = v;
        }
        if let Some(v) = self.quad_order {
            p.q_near = v;
        }
        if let Some(v) = self.leaf_size {
            p.leaf_size = v;
        }
        if let Some(v) = self.eta {
            p.eta = v;
        }
        if let Some(v) = self.eps_aca {
            p.eps_aca = v;
            p.eps_comp = Some(v);
            if self.eps_solver.is_none() {
                p.eps_solver = v / 10.0;
            }
        }
        if let Some(v) = self.eps_solver {
            p.eps_solver = v;
        }
        if let Some(v) = self.max_it {
            p.max_iterations = v;
        }
        p
    }
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// Single sphere refinement level.
    #[arg(long, conflicts_with = "mesh")]
    sphere_level: Option<usize>,
    /// Mesh file ("V F" header, vertex lines, triangle lines).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// First sphere level of a sequence.
    #[arg(long, default_value_t = 1)]
    min_level: usize,
    /// Last sphere level of a sequence.
    #[arg(long, default_value_t = 3)]
    max_level: usize,
}

struct MeshCase {
    level: usize,
    mesh: SurfaceMesh,
}

impl MeshArgs {
    /// The meshes to run. A mesh file is treated like the sphere level with
    /// the closest panel count, for the parameter schedule.
    fn meshes(&self) -> Result<Vec<MeshCase>, String> {
        if let Some(path) = &self.mesh {
            let mesh = SurfaceMesh::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let level = (1..=12)
                .min_by_key(|l| (8usize << (2 * l)).abs_diff(mesh.num_triangles()))
                .unwrap_or(1);
            return Ok(vec![MeshCase { level, mesh }]);
        }
        let levels = match self.sphere_level {
            Some(l) => l..=l,
            None if self.min_level <= self.max_level => self.min_level..=self.max_level,
            None => return Err(format!("--min-level {} exceeds --max-level {}", self.min_level, self.max_level)),
        };
        Ok(levels.map(|level| MeshCase { level, mesh: SurfaceMesh::sphere(level) }).collect())
    }
}

#[derive(Args)]
struct Output {
    /// CSV output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn open(&self) -> io::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(File::create(p)?),
            None => Box::new(io::stdout()),
        })
    }
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    meshes: MeshArgs,
    #[arg(long, default_value = "gca")]
    method: Method,
    #[arg(long, default_value = "dtn")]
    problem: Problem,
    #[arg(long, default_value = "poly")]
    test_case: TestCase,
    #[command(flatten)]
    overrides: Overrides,
    /// Unused by the deterministic solvers; accepted for uniform scripting.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    meshes: MeshArgs,
    /// Method to benchmark; both compressed methods when omitted.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, default_value = "slp")]
    operator: KernelKind,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    meshes: MeshArgs,
    /// Method to check; both compressed methods when omitted.
    #[arg(long)]
    method: Option<Method>,
    /// Operator to check; all three when omitted.
    #[arg(long)]
    operator: Option<KernelKind>,
    #[command(flatten)]
    overrides: Overrides,
    /// Random test vectors for the matvec comparison.
    #[arg(long, default_value_t = 10)]
    vectors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adds 1 to every entry of the given coupling or low-rank block.
    #[arg(long, hide = true)]
    corrupt_block: Option<usize>,
    #[command(flatten)]
    output: Output,
}

fn methods(m: Option<Method>) -> Vec<Method> {
    m.map_or(vec![Method::Hca, Method::Gca], |m| vec![m])
}

fn convergence(args: &ConvergenceArgs) -> Result<ExitCode, String> {
    let mut out = args.output.open().map_err(|e| e.to_string())?;
    let io = |e: io::Error| e.to_string();
    writeln!(out, "n,h,method,problem,case,l2_error,energy_error,iters,seconds,bytes").map_err(io)?;
    for case in args.meshes.meshes()? {
        let params = args.overrides.apply(Params::for_sphere_level(case.level));
        let r = run_level(&case.mesh, args.method, args.problem, args.test_case, &params).map_err(|e| e.to_string())?;
        if !r.converged {
            eprintln!("warning: CG did not converge on n = {} after {} iterations", r.n, r.iterations);
        }
        writeln!(
            out,
            "{},{:.6e},{},{},{},{:.6e},{},{},{:.3},{}",
            r.n,
            r.h,
            args.method.name(),
            args.problem.name(),
            args.test_case.name(),
            r.l2_error,
            r.energy_error.map_or(String::new(), |e| format!("{e:.6e}")),
            r.iterations,
            r.seconds,
            r.bytes
        )
        .map_err(io)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(args: &BenchArgs) -> Result<ExitCode, String> {
    let mut out = args.output.open().map_err(|e| e.to_string())?;
    let io = |e: io::Error| e.to_string();
    writeln!(
        out,
        "n,method,operator,setup_seconds_per_n,bytes_per_n,dense_bytes_per_n,max_rank,mean_rank"
    )
    .map_err(io)?;
    for case in args.meshes.meshes()? {
        let params = args.overrides.apply(Params::for_sphere_level(case.level));
        let kind = args.operator;
        let (nr, nc) = (kind.row_space().dof_count(&case.mesh), kind.col_space().dof_count(&case.mesh));
        let n = case.mesh.num_triangles();
        for method in methods(args.method) {
            let start = Instant::now();
            let mut assembly = Assembly::new(&case.mesh, method, params.clone()).map_err(|e| e.to_string())?;
            let op = assembly.operator(kind).map_err(|e| e.to_string())?;
            let seconds = start.elapsed().as_secs_f64();
            let ranks = op.block_ranks();
            let (max_rank, mean_rank) = if ranks.is_empty() {
                (String::new(), String::new())
            } else {
                let max = ranks.iter().max().copied().unwrap_or(0);
                let mean = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
                (max.to_string(), format!("{mean:.2}"))
            };
            let dense = if nr.max(nc) <= params.dense_cap {
                format!("{:.1}", (8 * nr * nc) as f64 / n as f64)
            } else {
                String::new()
            };
            writeln!(
                out,
                "{n},{},{},{:.6e},{:.1},{dense},{max_rank},{mean_rank}",
                method.name(),
                kind.name(),
                seconds / n as f64,
                op.storage().total() as f64 / n as f64,
            )
            .map_err(io)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (diff / norm).sqrt()
}

fn oracle_check(args: &OracleArgs) -> Result<ExitCode, String> {
    let mut out = args.output.open().map_err(|e| e.to_string())?;
    let io = |e: io::Error| e.to_string();
    writeln!(out, "n,method,operator,frobenius_error,matvec_error,tolerance,status").map_err(io)?;
    let kinds = args
        .operator
        .map_or(vec![KernelKind::Slp, KernelKind::DlpY, KernelKind::Hyp], |k| vec![k]);
    let mut ok = true;
    for case in args.meshes.meshes()? {
        let params = args.overrides.apply(Params::for_sphere_level(case.level));
        let tol = 10.0 * params.eps_aca;
        let asm = GalerkinAssembler::new(&case.mesh, params.q_near).map_err(|e| e.to_string())?;
        for &kind in &kinds {
            let dense = DenseMatrix::assemble(&asm, kind, params.dense_cap).map_err(|e| e.to_string())?;
            for method in methods(args.method) {
                let mut assembly = Assembly::new(&case.mesh, method, params.clone()).map_err(|e| e.to_string())?;
                let mut op = assembly.operator(kind).map_err(|e| e.to_string())?;
                if let Some(k) = args.corrupt_block {
                    corrupt(&mut op, k)?;
                }
                let full = to_dense(&op);
                let frob = (&full - &dense.matrix).norm() / dense.matrix.norm();
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                let mut matvec: f64 = 0.0;
                for _ in 0..args.vectors {
                    let x: Vec<f64> = (0..op.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    matvec = matvec.max(relative(&op.matvec(&x), &dense.matvec(&x)));
                }
                let pass = frob <= tol && matvec <= tol;
                ok &= pass;
                writeln!(
                    out,
                    "{},{},{},{frob:.3e},{matvec:.3e},{tol:.1e},{}",
                    case.mesh.num_triangles(),
                    method.name(),
                    kind.name(),
                    if pass { "pass" } else { "fail" }
                )
                .map_err(io)?;
                if !pass {
                    let errors = op.farfield_errors(&dense.matrix);
                    if let Some(worst) = errors.iter().max_by(|a, b| a.relative.total_cmp(&b.relative)) {
                        eprintln!(
                            "{} {} n={}: worst farfield block (row cluster {}, column cluster {}) has relative error {:.3e}",
                            method.name(),
                            kind.name(),
                            case.mesh.num_triangles(),
                            worst.row,
                            worst.col,
                            worst.relative
                        );
                    }
                }
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn corrupt(op: &mut Compressed, k: usize) -> Result<(), String> {
    match op {
        Compressed::H2(m) if k < m.coupling.len() => m.corrupt_coupling(k, 1.0),
        Compressed::H(m) if k < m.farfield.len() => m.farfield[k].data.a.add_scalar_mut(1.0),
        _ => return Err(format!("no farfield block {k} to corrupt")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Convergence(a) => convergence(a),
        Command::CompressBench(a) => bench(a),
        Command::OracleCheck(a) => oracle_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
