//! Command-line front end. Settings live in config files; the worker thread
//! count comes from `DYNRECON_THREADS`.
//!
//! Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynrecon::harness::io::{save_tensor, write_pgm16};
use dynrecon::harness::{
    export_views, generate_phantom, load_image, run_ablation_suite, PhantomSpec, RunInputs, TrainConfig,
};
use dynrecon::mri::{make_mask, Metrics};
use dynrecon::{Error, Result};

#[derive(Parser)]
#[command(name = "dynrecon", version, about = "Dynamic MRI reconstruction with patch-grouped tensor functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write truth, coil maps and fully sampled k-space for a phantom spec.
    Phantom { spec: PathBuf, out_dir: PathBuf },
    /// Write the sampling mask described by a run config (needs nx, ny, nt).
    Mask { config: PathBuf, out: PathBuf },
    /// Reconstruct the data named in a run config.
    Recon { config: PathBuf },
    /// Run all loss and model variants on the data named in a run config.
    Ablate { config: PathBuf },
    /// Compare an image file with a reference image file.
    Metrics { image: PathBuf, reference: PathBuf },
    /// Write graymap views of an image file.
    Export {
        image: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn phantom(spec: &Path, out: &Path) -> Result<()> {
    let spec = PhantomSpec::load(spec)?;
    let p = generate_phantom(&spec)?;
    fs::create_dir_all(out)?;
    save_tensor(p.truth.tensor(), &out.join("truth.bin"))?;
    save_tensor(p.sensitivities.tensor(), &out.join("sensitivities.bin"))?;
    save_tensor(p.kspace.tensor(), &out.join("kspace.bin"))?;
    fs::write(out.join("phantom.toml"), toml::to_string(&spec).expect("spec serializes"))?;
    println!("wrote phantom {}x{}x{} with {} coils to {}", spec.nx, spec.ny, spec.nt, spec.coils, out.display());
    Ok(())
}

fn mask(config: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let (Some(nx), Some(ny), Some(nt)) = (cfg.nx, cfg.ny, cfg.nt) else {
        return Err(Error::Config("mask generation needs nx, ny and nt".into()));
    };
    let m = make_mask(cfg.mask_kind, nx, ny, nt, cfg.acceleration, cfg.center_lines, cfg.mask_seed)?;
    save_tensor(m.pattern(), out)?;
    // frames side by side, ky downwards
    let mut px = Vec::with_capacity(nx * ny * nt);
    for y in 0..ny {
        for t in 0..nt {
            for x in 0..nx {
                px.push(if m.is_sampled(x, y, t) { 1.0 } else { 0.0 });
            }
        }
    }
    write_pgm16(&out.with_extension("pgm"), nx * nt, ny, &px)?;
    println!(
        "{} mask, nominal R {}, achieved R {:.3}",
        m.kind(),
        cfg.acceleration,
        m.achieved_acceleration()
    );
    Ok(())
}

fn recon(config: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let inputs = RunInputs::load(&cfg)?;
    let out = inputs.run(&cfg)?;
    let r = &out.report;
    if let (Some(z), Some(f)) = (r.zero_filled, r.final_after_replacement) {
        println!("zero-filled: PSNR {:.2} dB, SSIM {:.4}, RMSE {:.4}", z.psnr, z.ssim, z.rmse);
        println!("final:       PSNR {:.2} dB, SSIM {:.4}, RMSE {:.4}", f.psnr, f.ssim, f.rmse);
    }
    println!(
        "data consistency {:.4e} -> {:.4e} after replacement; {:.1} ms per iteration",
        r.dc_before_replacement, r.dc_after_replacement, out.timing.per_iteration_ms
    );
    match &cfg.output_dir {
        Some(d) => println!("outputs in {}", d.display()),
        None => println!("no output_dir configured; nothing written"),
    }
    Ok(())
}

fn ablate(config: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let inputs = RunInputs::load(&cfg)?;
    let suite = run_ablation_suite(&cfg, &inputs.kspace, &inputs.sensitivities, &inputs.mask, inputs.reference.as_ref())?;
    print!("{}", suite.table_markdown());
    Ok(())
}

fn metrics(image: &Path, reference: &Path) -> Result<()> {
    let m = Metrics::compute(&load_image(image)?, &load_image(reference)?)?;
    println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
    Ok(())
}

fn export(image: &Path, out: &Path, reference: Option<&Path>) -> Result<()> {
    let x = load_image(image)?;
    let r = reference.map(load_image).transpose()?;
    let v = export_views(&x, r.as_ref(), out)?;
    println!("wrote {} frames and profiles to {}", v.frames.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Phantom { spec, out_dir } => phantom(spec, out_dir),
        Command::Mask { config, out } => mask(config, out),
        Command::Recon { config } => recon(config),
        Command::Ablate { config } => ablate(config),
        Command::Metrics { image, reference } => metrics(image, reference),
        Command::Export {
            image,
            out_dir,
            reference,
        } => export(image, out_dir, reference.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
