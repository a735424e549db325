use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use smlink::analysis::complexity_report;
use smlink::channel::CorrelationSpec;
use smlink::measurements::{
    average_groups_of_four, build_virtual_array, chi_squared_rayleigh_gof,
    estimate_correlation_matrices, fit_exponential_decay, generate_fixture, load_measurement_file,
    rank_virtual_arrays, select_channels, write_measurement_set, LoadOptions, MeasurementSet,
    RawMeasurementFile,
};
use smlink::rng::rng_from_seed;
use smlink::sim::{
    compare_sm_smx, emit_csv, parse_snr_range, run_bound, run_monte_carlo, write_csv, AberCurve,
    ChannelSource, RunOptions, Scheme, SimulationConfig,
};
use smlink::Error;

use crate::args::{Command, CompareArgs, FixturesCommand, MeasurementsCommand, SimArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { sim, with_bound } => simulate(&sim, with_bound),
        Command::Bound { sim } => bound(&sim),
        Command::Compare(args) => compare(&args),
        Command::Complexity { nt, nr, bits } => {
            let r = complexity_report(nt, nr, bits)?;
            println!("c_sm={}", r.c_sm);
            println!("c_smx={}", r.c_smx);
            println!("c_rel={:.3}%", r.c_rel);
            Ok(())
        }
        Command::Measurements(cmd) => measurements(cmd),
        Command::Fixtures(cmd) => fixtures(cmd),
    }
}

fn missing(flag: &str) -> Error {
    Error::Config(format!("{flag} is required when no --config is given"))
}

/// Loads the configuration file, if any, and applies flag overrides. With
/// `link` unset the scheme, antenna count and order may be left open.
fn build_config(a: &SimArgs, link: bool) -> Result<SimulationConfig> {
    let mut c = match &a.config {
        Some(path) => SimulationConfig::load(path)?,
        None => {
            let nr = a.nr.ok_or_else(|| missing("--nr"))?;
            if link {
                SimulationConfig::new(
                    a.scheme.ok_or_else(|| missing("--scheme"))?,
                    a.nt.ok_or_else(|| missing("--nt"))?,
                    nr,
                    a.mod_order.ok_or_else(|| missing("--mod-order"))?,
                )
            } else {
                SimulationConfig::new(Scheme::Sm, 1, nr, 2)
            }
        }
    };
    if let Some(v) = a.scheme {
        c.scheme = v;
    }
    if let Some(v) = a.nt {
        c.nt = v;
    }
    if let Some(v) = a.nr {
        c.nr = v;
    }
    if let Some(v) = a.mod_order {
        c.mod_order = v;
    }
    if let Some(v) = &a.snr {
        c.snr_grid_db = parse_snr_range(v)?;
    }
    if let Some(v) = &a.channel {
        c.channel = v.clone();
    }
    if let (Some(b), ChannelSource::File { bin, .. }) = (a.bin, &mut c.channel) {
        *bin = b;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.min_errors {
        c.stop_rule.min_bit_errors = v;
    }
    if let Some(v) = a.max_bits {
        c.stop_rule.max_bits = v;
    }
    if let Some(v) = a.pep {
        c.pep_mode = v;
    }
    if let Some(v) = &a.out {
        c.output_path = Some(v.clone());
    }
    if c.snr_grid_db.is_empty() {
        return Err(Error::Config("the SNR grid is empty; pass --snr start:step:stop".into()).into());
    }
    if link {
        c.validate()?;
    }
    Ok(c)
}

fn run_options(a: &SimArgs) -> RunOptions {
    match a.workers {
        Some(w) if w > 0 => RunOptions { workers: w },
        _ => RunOptions::from_env(),
    }
}

fn write_curve(curve: &AberCurve, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            emit_csv(curve, path)?;
            log::info!("wrote {}", path.display());
        }
        None => write_csv(curve, std::io::stdout().lock()).context("writing to stdout")?,
    }
    Ok(())
}

fn simulate(a: &SimArgs, with_bound: bool) -> Result<()> {
    let config = build_config(a, true)?;
    let mut curve = run_monte_carlo(&config, run_options(a))?;
    if with_bound {
        curve.bound = Some(run_bound(&config)?);
    }
    for p in curve.points.iter().filter(|p| p.max_bits_hit) {
        log::warn!(
            "{} dB stopped at the bit budget with {} errors",
            p.snr_db,
            p.errors
        );
    }
    write_curve(&curve, config.output_path.as_deref())
}

fn bound(a: &SimArgs) -> Result<()> {
    let config = build_config(a, true)?;
    let curve = AberCurve {
        points: Vec::new(),
        bound: Some(run_bound(&config)?),
        config_digest: config.digest()?,
    };
    write_curve(&curve, config.output_path.as_deref())
}

fn parse_side(s: &str) -> Result<(Scheme, usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [scheme, nt, m] = parts[..] else {
        return Err(Error::Config(format!("expected scheme:nt:mod_order, got '{s}'")).into());
    };
    let num = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad number '{v}' in '{s}'")))
    };
    Ok((scheme.parse()?, num(nt)?, num(m)?))
}

fn compare(args: &CompareArgs) -> Result<()> {
    let base = build_config(&args.sim, false)?;
    let side = |spec: &str| -> Result<SimulationConfig> {
        let (scheme, nt, m) = parse_side(spec)?;
        let mut c = base.clone();
        c.scheme = scheme;
        c.nt = nt;
        c.mod_order = m;
        c.output_path = None;
        c.validate()?;
        Ok(c)
    };
    let pairs = args
        .pairs
        .iter()
        .map(|p| {
            let (a, b) = p
                .split_once('/')
                .ok_or_else(|| Error::Config(format!("expected <first>/<second>, got '{p}'")))?;
            Ok((side(a)?, side(b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = compare_sm_smx(&pairs, &args.targets, run_options(&args.sim))?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    let mut out = std::io::stdout().lock();
    for (cmp, (a, b)) in report.iter().zip(&pairs) {
        for (target, gap) in &cmp.gaps_db {
            let gap = gap.map_or_else(|| "n/a".to_string(), |g| format!("{g:.2} dB"));
            writeln!(out, "{} vs {} at ABER {target:e}: gap {gap}", cmp.first_label, cmp.second_label)?;
        }
        if let Some(dir) = &args.out_dir {
            for (curve, c) in [(&cmp.first, a), (&cmp.second, b)] {
                let name = format!("{}_nt{}_m{}.csv", c.scheme.to_string().to_lowercase(), c.nt, c.mod_order);
                emit_csv(curve, dir.join(name))?;
            }
        }
    }
    Ok(())
}

fn load(path: &Path, bin: usize) -> Result<MeasurementSet> {
    Ok(load_measurement_file(path, bin, LoadOptions::default())?)
}

fn open_output(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn measurements(cmd: MeasurementsCommand) -> Result<()> {
    match cmd {
        MeasurementsCommand::Gof { file, bin, significance } => {
            let set = load(&file, bin)?;
            let r = chi_squared_rayleigh_gof(&set.magnitudes(), significance)?;
            println!("chi2={:.4} dof={} p_value={:.4e} scale={:.4}", r.chi2_statistic, r.dof, r.p_value, r.scale_estimate);
            println!("{}", if r.passed { "rayleigh: accepted" } else { "rayleigh: rejected" });
        }
        MeasurementsCommand::Fit { file, bin } => {
            let spec = estimate_correlation_matrices(&load(&file, bin)?)?;
            for (side, r) in [("tx", spec.r_tx()), ("rx", spec.r_rx())] {
                let f = fit_exponential_decay(r)?;
                println!("{side}: r_c={:.4} beta={:.4} mse={:.3e}", f.r_c, f.beta, f.mse);
            }
        }
        MeasurementsCommand::Select { files, bin, mode, top } => {
            let sets = files.iter().map(|f| load(f, bin)).collect::<Result<Vec<_>>>()?;
            let ranked = select_channels(&sets, mode)?;
            for r in ranked.iter().take(top.unwrap_or(usize::MAX)) {
                println!(
                    "{}\t{}\tscore={:.4e}\tbeta_tx={:.3}\tbeta_rx={:.3}",
                    files[r.index].display(),
                    r.location_tag,
                    r.score,
                    r.tx_fit.beta,
                    r.rx_fit.beta
                );
            }
        }
        MeasurementsCommand::VirtualArray { files, bin, size, significance, top, allow_non_reference, out } => {
            let arrays = files
                .iter()
                .map(|f| {
                    let va = build_virtual_array(&load(f, bin)?, size, allow_non_reference)
                        .with_context(|| format!("building a virtual array from {}", f.display()))?;
                    Ok(va)
                })
                .collect::<Result<Vec<_>>>()?;
            let order = rank_virtual_arrays(&arrays, significance)?;
            let keep: Vec<_> = order.iter().take(top.unwrap_or(usize::MAX)).map(|&i| arrays[i].clone()).collect();
            for (&i, va) in order.iter().zip(&keep) {
                println!(
                    "{}\tmean={:.4}\tvariance={:.4}\tvariation={:.4e}",
                    files[i].display(),
                    va.rayleigh_mean,
                    va.rayleigh_variance,
                    va.variation
                );
            }
            write_measurement_set(&MeasurementSet::from_virtual_arrays(&keep, "virtual")?, &out)?;
        }
        MeasurementsCommand::ExportCsv { file, out } => {
            let raw = RawMeasurementFile::read(&file)?;
            let mut w = open_output(out.as_ref())?;
            raw.export_csv(&mut w).context("writing CSV")?;
            w.flush()?;
        }
        MeasurementsCommand::Average { file, out } => {
            average_groups_of_four(&RawMeasurementFile::read(&file)?).write(&out)?;
        }
    }
    Ok(())
}

fn fixtures(cmd: FixturesCommand) -> Result<()> {
    match cmd {
        FixturesCommand::Generate { out, nt, nr, snapshots, bins, channel, device, location, seed } => {
            let spec = match channel {
                ChannelSource::Iid => CorrelationSpec::identity(nt, nr)?,
                ChannelSource::Expcorr { beta_tx, beta_rx } => {
                    CorrelationSpec::exponential(nt, nr, beta_tx, beta_rx)?
                }
                ChannelSource::File { .. } => {
                    return Err(Error::Config("fixtures are drawn from iid or expcorr models".into()).into())
                }
            };
            generate_fixture(&spec, snapshots, bins, &device, &location, &mut rng_from_seed(seed))?
                .write(&out)?;
        }
    }
    Ok(())
}
