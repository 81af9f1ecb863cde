//! Output directory bookkeeping: files, plot scripts and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub schema_version: u32,
    pub tool_version: &'a str,
    pub subcommand: &'a str,
    pub args: Vec<String>,
    /// Re-ingests with `--config` to the same resolved configuration.
    pub resolved_config: String,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub created_unix_s: u64,
}

pub struct OutputDir {
    root: PathBuf,
    plot_scripts: bool,
    written: Vec<String>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path, plot_scripts: bool) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            plot_scripts,
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    fn open(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.root.join(name);
        let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let mut w = self.open(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// `write` fills the file; `x`/`y` name the columns a plot script uses.
    pub fn csv<F>(&mut self, name: &str, x: &str, y: &[&str], log_x: bool, write: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    {
        let mut w = self.open(name)?;
        write(&mut w)?;
        w.flush()?;
        if self.plot_scripts {
            let script = plot_script(name, x, y, log_x);
            let stem = name.trim_end_matches(".csv");
            self.text(&format!("plot_{stem}.py"), &script)?;
        }
        Ok(())
    }

    pub fn finish(mut self, subcommand: &str, resolved_config: String) -> anyhow::Result<()> {
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            args: std::env::args().skip(1).collect(),
            resolved_config,
            outputs: {
                let mut o = self.written.clone();
                o.push("manifest.json".into());
                o
            },
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.json("manifest.json", &manifest)
    }
}

fn plot_script(csv_name: &str, x: &str, y: &[&str], log_x: bool) -> String {
    let cols = y.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(", ");
    let scale = if log_x { "ax.set_xscale(\"log\")\n" } else { "" };
    format!(
        "import csv\nimport matplotlib.pyplot as plt\n\n\
         with open({csv_name:?}) as f:\n    rows = list(csv.DictReader(f))\n\
         x = [float(r[{x:?}]) for r in rows]\n\
         fig, ax = plt.subplots()\n\
         for c in [{cols}]:\n    ax.plot(x, [float(r[c]) for r in rows], label=c)\n\
         {scale}ax.set_xlabel({x:?})\nax.legend()\nax.grid(True)\n\
         plt.savefig({png:?})\n",
        png = csv_name.replace(".csv", ".png"),
    )
}
