use std::path::PathBuf;

use bca_core::complexity::{report, LayerSpec, Method};
use bca_core::{Error, Result};
use clap::Parser;
use serde_json::json;

use crate::config::{self, ComplexitySection};

#[derive(Parser)]
pub struct Args {
    /// TOML config file with a [complexity] section.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Named layer spec: llama2-7b-qv, roberta-base-qv, roberta-large-qv.
    #[arg(long)]
    pub preset: Option<String>,

    /// Shorthand for square matrices (sets both d-out and d-in).
    #[arg(long)]
    pub d: Option<usize>,

    #[arg(long)]
    pub d_out: Option<usize>,

    #[arg(long)]
    pub d_in: Option<usize>,

    #[arg(long)]
    pub layers: Option<usize>,

    #[arg(long)]
    pub matrices: Option<usize>,

    /// Comma-separated block sizes for the block-circulant rows.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<usize>>,

    /// Comma-separated methods: bca, dense, lora, vera, fourierft.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,

    #[arg(long)]
    pub lora_rank: Option<usize>,

    #[arg(long)]
    pub vera_rank: Option<usize>,

    #[arg(long)]
    pub fourier_freqs: Option<usize>,

    /// Print JSON instead of the text table.
    #[arg(long)]
    pub json: bool,

    /// Also write report.json into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn preset_spec(name: &str) -> Result<LayerSpec> {
    match name {
        "llama2-7b-qv" => Ok(LayerSpec::llama2_7b_qv()),
        "roberta-base-qv" => Ok(LayerSpec::roberta_base_qv()),
        "roberta-large-qv" => Ok(LayerSpec::roberta_large_qv()),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (known: llama2-7b-qv, roberta-base-qv, roberta-large-qv)"
        ))),
    }
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let mut section = file.complexity.unwrap_or_default();
    if let Some(p) = args.preset {
        section.preset = Some(p);
    }
    if let Some(d) = args.d {
        section.d_out = Some(d);
        section.d_in = Some(d);
    }
    if let Some(d) = args.d_out {
        section.d_out = Some(d);
    }
    if let Some(d) = args.d_in {
        section.d_in = Some(d);
    }
    if let Some(l) = args.layers {
        section.layers = Some(l);
    }
    if let Some(m) = args.matrices {
        section.matrices = Some(m);
    }
    if let Some(ps) = args.p {
        section.block_sizes = ps;
    }
    if let Some(ms) = args.methods {
        section.methods = ms;
    }
    if let Some(r) = args.lora_rank {
        section.lora_rank = r;
    }
    if let Some(r) = args.vera_rank {
        section.vera_rank = r;
    }
    if let Some(f) = args.fourier_freqs {
        section.fourier_freqs = f;
    }

    let spec = build_spec(&section)?;
    let methods = build_methods(&section)?;
    let table = report(&methods, &spec)?;

    if args.json {
        let payload = json!({
            "schema_version": 1,
            "command": "complexity",
            "report": table,
        });
        println!("{}", serde_json::to_string_pretty(&payload).expect("serializable"));
    } else {
        print!("{}", table.render_table());
    }
    if let Some(dir) = args.out.or(file.out) {
        let payload = json!({
            "schema_version": 1,
            "command": "complexity",
            "report": table,
        });
        super::write_artifact(
            &dir,
            "report.json",
            serde_json::to_string_pretty(&payload).expect("serializable"),
        )?;
    }
    Ok(())
}

fn build_spec(section: &ComplexitySection) -> Result<LayerSpec> {
    let mut spec = match &section.preset {
        Some(name) => preset_spec(name)?,
        None => LayerSpec::llama2_7b_qv(),
    };
    if let Some(d) = section.d_out {
        spec.d_out = d;
    }
    if let Some(d) = section.d_in {
        spec.d_in = d;
    }
    if let Some(l) = section.layers {
        spec.num_layers = l;
    }
    if let Some(m) = section.matrices {
        spec.matrices_per_layer = m;
    }
    spec.validate()?;
    Ok(spec)
}

fn build_methods(section: &ComplexitySection) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for name in &section.methods {
        match name.as_str() {
            "bca" => {
                for &p in &section.block_sizes {
                    methods.push(Method::Bca { block_size: p });
                }
            }
            "dense" => methods.push(Method::Dense),
            "lora" => methods.push(Method::Lora {
                rank: section.lora_rank,
            }),
            "vera" => methods.push(Method::Vera {
                rank: section.vera_rank,
            }),
            "fourierft" => methods.push(Method::FourierFt {
                n_freq: section.fourier_freqs,
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown method '{other}' (known: bca, dense, lora, vera, fourierft)"
                )))
            }
        }
    }
    Ok(methods)
}
