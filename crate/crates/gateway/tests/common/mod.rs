#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carosegd_core::geometry::AnnotationSet;
use carosegd_core::imaging::PitchMeta;
use carosegd_core::phantom::{Phantom, PhantomSpec};

pub fn write_item(dir: &Path, id: &str, phantom: &Phantom, experts: &[(&str, f64)]) {
    fs::write(dir.join(format!("{id}.png")), phantom.image.to_png_bytes().unwrap()).unwrap();
    let meta = PitchMeta {
        pitch_vertical_um: phantom.spec.pitch_um,
        pitch_horizontal_um: phantom.spec.pitch_um,
    };
    fs::write(dir.join(format!("{id}.meta")), meta.to_text()).unwrap();
    for (expert, offset) in experts {
        let mut set: AnnotationSet = phantom.annotations(expert, 16);
        set.li_points.iter_mut().for_each(|p| p.1 += offset);
        set.ma_points.iter_mut().for_each(|p| p.1 += offset);
        fs::write(dir.join(format!("{id}_{expert}.csv")), set.to_csv()).unwrap();
    }
}

/// One phantom item `phantom` annotated by A1 (exact) and A2 (shifted 2 rows down).
pub fn phantom_dataset(dir: &Path) -> Phantom {
    let p = Phantom::standard();
    write_item(dir, "phantom", &p, &[("A1", 0.0), ("A2", 2.0)]);
    p
}

pub fn small_phantom(seed: u64) -> Phantom {
    PhantomSpec { seed, ..PhantomSpec::default() }.build().unwrap()
}

pub struct Cli {
    pub store: PathBuf,
}

impl Cli {
    pub fn new(store: &Path) -> Self {
        Self { store: store.to_path_buf() }
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_carosegd"))
            .args(args)
            .env("CAROSEGD_STORE", &self.store)
            .output()
            .expect("binary runs")
    }
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}
