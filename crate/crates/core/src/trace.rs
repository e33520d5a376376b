//! Per-tick trace records and their on-disk formats.
//!
//! # CSV
//!
//! One header row, then one row per control tick. For an `n`-joint arm the
//! columns are, in order:
//!
//! | column | unit |
//! |---|---|
//! | `t` | s |
//! | `q_0 .. q_{n-1}` | rad |
//! | `qdot_0 .. qdot_{n-1}` | rad/s |
//! | `k_e` | J |
//! | `h` | J |
//! | `psi` | W |
//! | `u_nom_0 ..` | N·m |
//! | `u_0 ..` | N·m |
//! | `u_safe_0 ..` | N·m |
//! | `p_nom` | W |
//! | `p_safe` | W |
//! | `p_ext` | W |
//! | `e_spring` | J |
//! | `ee_x`, `ee_y` | m |
//! | `intervened` | 0/1 |
//!
//! # Binary
//!
//! Little-endian. Header: magic `b"KECB"`, `u16` version (1), `u16` joint
//! count `n`, `u64` record count. Each record is the CSV row's numeric
//! columns as `f64` (`5n + 10` values) followed by one `u8` for `intervened`.

use std::io::{self, Read, Write};

use nalgebra::{DVector, Vector2};

const MAGIC: &[u8; 4] = b"KECB";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub k_e: f64,
    pub h: f64,
    pub psi: f64,
    pub u_nom: DVector<f64>,
    pub u: DVector<f64>,
    pub u_safe: DVector<f64>,
    pub p_nom: f64,
    pub p_safe: f64,
    pub p_ext: f64,
    pub e_spring: f64,
    pub ee: Vector2<f64>,
    pub intervened: bool,
}

impl TraceRecord {
    fn numeric(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(5 * self.q.len() + 10);
        out.push(self.t);
        out.extend(self.q.iter());
        out.extend(self.qdot.iter());
        out.extend([self.k_e, self.h, self.psi]);
        out.extend(self.u_nom.iter());
        out.extend(self.u.iter());
        out.extend(self.u_safe.iter());
        out.extend([
            self.p_nom,
            self.p_safe,
            self.p_ext,
            self.e_spring,
            self.ee.x,
            self.ee.y,
        ]);
        out
    }

    fn from_numeric(n: usize, vals: &[f64], intervened: bool) -> Self {
        let mut it = vals.iter().copied();
        let mut take = |k: usize| DVector::from_iterator(k, it.by_ref().take(k));
        let t = take(1)[0];
        let q = take(n);
        let qdot = take(n);
        let s = take(3);
        let u_nom = take(n);
        let u = take(n);
        let u_safe = take(n);
        let p = take(6);
        Self {
            t,
            q,
            qdot,
            k_e: s[0],
            h: s[1],
            psi: s[2],
            u_nom,
            u,
            u_safe,
            p_nom: p[0],
            p_safe: p[1],
            p_ext: p[2],
            e_spring: p[3],
            ee: Vector2::new(p[4], p[5]),
            intervened,
        }
    }
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    let vec_cols = |cols: &mut Vec<String>, name: &str| {
        cols.extend((0..n).map(|i| format!("{name}_{i}")));
    };
    vec_cols(&mut cols, "q");
    vec_cols(&mut cols, "qdot");
    cols.extend(["k_e", "h", "psi"].map(String::from));
    vec_cols(&mut cols, "u_nom");
    vec_cols(&mut cols, "u");
    vec_cols(&mut cols, "u_safe");
    cols.extend(
        [
            "p_nom",
            "p_safe",
            "p_ext",
            "e_spring",
            "ee_x",
            "ee_y",
            "intervened",
        ]
        .map(String::from),
    );
    cols
}

pub fn write_csv<W: Write>(records: &[TraceRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let n = records.first().map_or(0, |r| r.q.len());
    w.write_record(csv_header(n))?;
    for r in records {
        let mut row: Vec<String> = r.numeric().iter().map(|v| v.to_string()).collect();
        row.push(u8::from(r.intervened).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary<W: Write>(records: &[TraceRecord], mut writer: W) -> io::Result<()> {
    let n = records.first().map_or(0, |r| r.q.len());
    let n16 = u16::try_from(n)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many joints"))?;
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&n16.to_le_bytes())?;
    writer.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        if r.q.len() != n {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "mixed joint counts",
            ));
        }
        for v in r.numeric() {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.write_all(&[u8::from(r.intervened)])?;
    }
    writer.flush()
}

pub fn read_binary<R: Read>(mut reader: R) -> io::Result<Vec<TraceRecord>> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a trace file"));
    }
    let mut b2 = [0u8; 2];
    reader.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(bad("unsupported trace version"));
    }
    reader.read_exact(&mut b2)?;
    let n = u16::from_le_bytes(b2) as usize;
    let mut b8 = [0u8; 8];
    reader.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let width = 5 * n + 10;
    let mut vals = vec![0.0; width];
    let mut records = Vec::new();
    for _ in 0..count {
        for v in vals.iter_mut() {
            reader.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        let mut flag = [0u8; 1];
        reader.read_exact(&mut flag)?;
        records.push(TraceRecord::from_numeric(n, &vals, flag[0] != 0));
    }
    Ok(records)
}
