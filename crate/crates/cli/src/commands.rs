use std::fmt::Write as _;
use std::path::Path;

use cim_core::adc::Adc;
use cim_core::amu::{ref_column_voltage, RefPattern};
use cim_core::charge::{dac_convert, pmac_voltage, InputActivation, MAX_PRODUCT};
use cim_core::cim_macro::{CimMacro, WeightTile, AMU_ROWS, OUTPUTS, WEIGHT_BITS};
use cim_core::config::RunConfig;
use cim_core::cost::{adc_energy_comparison, throughput_report, AdcEnergyModel};
use cim_core::mapper::{histograms_to_csv, records_to_csv, run_sweep, SweepGrid, SyntheticTask, Workload};
use cim_core::tensor::{exact_matmul, read_tensor, to_csv, Tensor2};
use cim_core::variation::run_montecarlo_dac;
use cim_core::{CimError, Result};
use serde_json::json;

use crate::output::{emit, json as to_json, Artifact};
use crate::{Command, GlobalArgs};

fn effective_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.vdd {
        cfg.vdd = v;
    }
    if let Some(r) = g.rows {
        cfg.activated_rows = r;
    }
    if let Some(r) = g.rho {
        cfg.rho = r;
    }
    if let Some(b) = g.adc_bits {
        cfg.adc.bits = b;
    }
    if let Some(c) = g.cutoff {
        cfg.adc.cutoff = c;
    }
    if let Some(s) = &g.scheme {
        cfg.adc.scheme = s.clone();
    }
    if let Some(m) = &g.ref_mode {
        cfg.adc.ref_mode = m.clone();
    }
    if g.no_noise {
        cfg.noise.enabled = false;
    }
    Ok(cfg)
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact {
        default_name: name.into(),
        contents,
        path: None,
    }
}

fn code(x: u8) -> Result<InputActivation> {
    InputActivation::new(x)
}

pub fn run(g: &GlobalArgs, command: &Command, env_seed: Option<&str>) -> Result<()> {
    let mut cfg = effective_config(g)?;
    let seed = cfg.resolve_seed(g.seed, env_seed)?;
    cfg.seed = Some(seed);
    let artifacts = match command {
        Command::DacTransfer { montecarlo } => dac_transfer(&cfg, seed, *montecarlo)?,
        Command::AdcTransfer => adc_transfer(&cfg, seed)?,
        Command::Refgen => refgen(&cfg, seed)?,
        Command::Mac { inputs, weights } => mac(&cfg, seed, inputs, weights)?,
        Command::Matmul { x, w } => matmul(&cfg, seed, x, w)?,
        Command::Montecarlo { trials, code } => montecarlo(&cfg, seed, *trials, *code)?,
        Command::Sweep {
            grid,
            workload,
            histogram,
        } => sweep(&cfg, seed, grid.as_deref(), workload, histogram.as_deref())?,
        Command::Energy => energy(&cfg, seed)?,
        Command::GenWorkload {
            dir,
            task_seed,
            hidden,
            train_samples,
            test_samples,
            epochs,
        } => {
            let d = SyntheticTask::default();
            let task = SyntheticTask {
                seed: *task_seed,
                hidden: hidden.unwrap_or(d.hidden),
                train_samples: train_samples.unwrap_or(d.train_samples),
                test_samples: test_samples.unwrap_or(d.test_samples),
                epochs: epochs.unwrap_or(d.epochs),
                ..d
            };
            let w = task.generate()?;
            w.save(dir)?;
            let summary = json!({
                "name": w.name,
                "test_samples": w.labels.len(),
                "float_accuracy": w.float_accuracy,
                "exact_accuracy": w.exact_accuracy()?,
            });
            vec![artifact("gen-workload.json", to_json(&summary)?)]
        }
        Command::ShowConfig => vec![artifact("config.json", cfg.to_json())],
    };
    let output_dir = cfg.output_dir.as_deref().map(Path::new);
    emit(artifacts, g.out.as_deref(), output_dir)
}

fn dac_transfer(cfg: &RunConfig, seed: u64, montecarlo: Option<u64>) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let mut s = String::from("code,v_norm,volts");
    if montecarlo.is_some() {
        s.push_str(",mc_mean_volts,mc_std_volts");
    }
    s.push('\n');
    for x in InputActivation::all() {
        let v = dac_convert(x);
        write!(s, "{},{},{}", x.value(), v.value(), mc.vdd.to_volts(v)).unwrap();
        if let Some(n) = montecarlo {
            let st = run_montecarlo_dac(&mc.noise, mc.vdd, x, n, seed)?;
            write!(s, ",{},{}", st.mean, st.stddev).unwrap();
        }
        s.push('\n');
    }
    Ok(vec![artifact("dac-transfer.csv", s)])
}

fn adc_transfer(cfg: &RunConfig, seed: u64) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let adc = Adc::new(&mc.adc, mc.activated_rows, mc.rho)?;
    let offsets = adc.zero_offsets();
    let mut s = String::from("pmac,v_abl,volts,code,dequantized\n");
    for p in 0..=MAX_PRODUCT * mc.activated_rows {
        let v = pmac_voltage(f64::from(p), mc.rho);
        let c = adc.convert(v, &offsets)?;
        writeln!(
            s,
            "{p},{},{},{},{}",
            v.value(),
            mc.vdd.to_volts(v),
            c.0,
            adc.dequantize(c)?
        )
        .unwrap();
    }
    Ok(vec![artifact("adc-transfer.csv", s)])
}

fn refgen(cfg: &RunConfig, seed: u64) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let mut s = String::from("n,v_norm,volts\n");
    for n in 0..16u8 {
        let v = ref_column_voltage(RefPattern::new(n)?, mc.rho)?;
        writeln!(s, "{n},{},{}", v.value(), mc.vdd.to_volts(v)).unwrap();
    }
    Ok(vec![artifact("refgen.csv", s)])
}

fn mac(cfg: &RunConfig, seed: u64, inputs: &[u8], weights: &Path) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let engine = CimMacro::new(mc)?;
    let w: Tensor2<i8> = read_tensor(weights)?;
    if w.shape() != (inputs.len(), OUTPUTS) || inputs.len() > AMU_ROWS {
        return Err(CimError::Shape(format!(
            "weights {:?} do not fit {} inputs x {OUTPUTS} outputs",
            w.shape(),
            inputs.len()
        )));
    }
    let acts = inputs.iter().map(|&x| code(x)).collect::<Result<Vec<_>>>()?;
    let mut tile = WeightTile::default();
    for r in 0..w.rows() {
        for n in 0..OUTPUTS {
            tile.values[r][n] = w.get(r, n);
        }
    }
    let cycle = engine.mac_cycle(&acts, &tile, &[0])?;
    let x = Tensor2::new(1, inputs.len(), inputs.to_vec())?;
    let exact = exact_matmul(&x, &w)?;
    let samples: Vec<_> = cycle
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({
                "column": i,
                "output": i / WEIGHT_BITS,
                "bit": i % WEIGHT_BITS,
                "exact_pmac": s.exact,
                "v_abl": s.v_abl.value(),
                "code": s.code.0,
                "dequantized": s.dequantized,
            })
        })
        .collect();
    let doc = json!({
        "outputs": cycle.output.0,
        "exact": exact.row(0),
        "samples": samples,
    });
    Ok(vec![artifact("mac.json", to_json(&doc)?)])
}

fn matmul(cfg: &RunConfig, seed: u64, x: &Path, w: &Path) -> Result<Vec<Artifact>> {
    let engine = CimMacro::new(cfg.macro_config(seed)?)?;
    let x: Tensor2<u8> = read_tensor(x)?;
    let w: Tensor2<i8> = read_tensor(w)?;
    let out = engine.matmul(&x, &w)?;
    let header: Vec<String> = (0..out.cols()).map(|n| format!("n{n}")).collect();
    Ok(vec![artifact("matmul.csv", to_csv(&out, Some(&header)))])
}

fn montecarlo(cfg: &RunConfig, seed: u64, trials: u64, only: Option<u8>) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let codes: Vec<InputActivation> = match only {
        Some(c) => vec![code(c)?],
        None => InputActivation::all().collect(),
    };
    let mut s = String::from("code,trials,ideal_volts,mean_volts,std_volts,min_volts,max_volts\n");
    for x in codes {
        let st = run_montecarlo_dac(&mc.noise, mc.vdd, x, trials, seed)?;
        let ideal = mc.vdd.to_volts(dac_convert(x));
        writeln!(
            s,
            "{},{},{ideal},{},{},{},{}",
            x.value(),
            st.n,
            st.mean,
            st.stddev,
            st.min,
            st.max
        )
        .unwrap();
    }
    Ok(vec![artifact("montecarlo.csv", s)])
}

fn sweep(
    cfg: &RunConfig,
    seed: u64,
    grid: Option<&Path>,
    workload: &Path,
    histogram: Option<&Path>,
) -> Result<Vec<Artifact>> {
    let grid = match grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CimError::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            SweepGrid::from_json(&text)?
        }
        None => SweepGrid {
            rows: vec![cfg.activated_rows],
            adc_bits: vec![cfg.adc.bits],
            cutoff: vec![cfg.adc.cutoff],
            hw_errors: vec![cfg.noise.enabled],
            repeats: 1,
        },
    };
    grid.validate()?;
    // Grid points override rows, bits and cutoff; the base only has to be
    // valid at the native point.
    let mut native = cfg.clone();
    native.activated_rows = 16;
    native.adc.bits = 4;
    native.adc.cutoff = 0.5;
    let base = native.macro_config(seed)?;
    let wl = Workload::load(workload)?;
    let records = run_sweep(&grid, &base, &wl)?;
    let mut out = vec![artifact("sweep.csv", records_to_csv(&records))];
    if let Some(h) = histogram {
        let names: Vec<String> = wl.layers.iter().map(|l| l.spec.name.clone()).collect();
        out.push(Artifact {
            default_name: "histogram.csv".into(),
            contents: histograms_to_csv(&records, &names),
            path: Some(h.to_path_buf()),
        });
    }
    Ok(out)
}

fn energy(cfg: &RunConfig, seed: u64) -> Result<Vec<Artifact>> {
    let mc = cfg.macro_config(seed)?;
    let doc = json!({
        "report": throughput_report(&mc)?,
        "adc_energy": adc_energy_comparison(&AdcEnergyModel::default()),
    });
    Ok(vec![artifact("energy.json", to_json(&doc)?)])
}
