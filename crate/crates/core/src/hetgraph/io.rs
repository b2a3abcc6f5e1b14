use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeTypeId, GraphBuilder, GraphError, HetGraph, NodeTypeId, TypeRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: String,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub etype: String,
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, GraphError> {
    let file = path.display().to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| GraphError::Malformed {
            file: file.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Reads a node file and an edge file in JSON-Lines form.
///
/// Without a registry, node types take the dimension of their first record
/// and types are numbered by first appearance (node types from the node file,
/// edge types from the edge file).
pub fn load_jsonl(
    nodes: &Path,
    edges: &Path,
    registry: Option<TypeRegistry>,
) -> Result<HetGraph, GraphError> {
    let node_recs: Vec<(usize, NodeRecord)> = read_records(nodes)?;
    let edge_recs: Vec<(usize, EdgeRecord)> = read_records(edges)?;
    let fixed = registry.is_some();
    let mut reg = registry.unwrap_or_default();
    if !fixed {
        for (_, r) in &node_recs {
            if reg.node_type_id(&r.node_type).is_none() {
                if r.x.is_empty() {
                    return Err(GraphError::ZeroDim(r.node_type.clone()));
                }
                reg.add_node_type(r.node_type.clone(), r.x.len())?;
            }
        }
        for (_, r) in &edge_recs {
            if reg.edge_type_id(&r.etype).is_none() {
                reg.add_edge_type(r.etype.clone())?;
            }
        }
    }
    let mut b = GraphBuilder::new(reg);
    for (_, r) in node_recs {
        let t = b
            .registry()
            .node_type_id(&r.node_type)
            .ok_or_else(|| GraphError::UnknownNodeType(r.node_type.clone()))?;
        b.add_node(r.id, t, &r.x)?;
    }
    let efile = edges.display().to_string();
    for (line, r) in edge_recs {
        let src = b.external(&r.src).ok_or_else(|| GraphError::DanglingEndpoint {
            file: efile.clone(),
            line,
            id: r.src.clone(),
        })?;
        let dst = b.external(&r.dst).ok_or_else(|| GraphError::DanglingEndpoint {
            file: efile.clone(),
            line,
            id: r.dst.clone(),
        })?;
        let t = b
            .registry()
            .edge_type_id(&r.etype)
            .ok_or_else(|| GraphError::UnknownEdgeType(r.etype.clone()))?;
        b.add_edge(src, dst, t)?;
    }
    Ok(b.build())
}

/// Writes the graph as a node file and an edge file in JSON-Lines form.
pub fn write_jsonl(g: &HetGraph, nodes: &Path, edges: &Path) -> Result<(), GraphError> {
    let reg = g.registry();
    let mut w = BufWriter::new(fs::File::create(nodes)?);
    for v in 0..g.n_nodes() {
        let rec = NodeRecord {
            id: g.external_id(v).to_string(),
            node_type: reg.node_type(g.node_type(v)).name.clone(),
            x: g.features(v).to_vec(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| GraphError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(edges)?);
    for e in g.edges() {
        let rec = EdgeRecord {
            src: g.external_id(e.src).to_string(),
            dst: g.external_id(e.dst).to_string(),
            etype: reg.edge_type_name(e.etype).to_string(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| GraphError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const MAGIC: &[u8; 4] = b"HBFF";
const VERSION: u32 = 1;

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Dec<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], GraphError> {
        if self.pos + n > self.buf.len() {
            return Err(GraphError::BadCache("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, GraphError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, GraphError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| GraphError::BadCache("invalid utf-8".into()))
    }
}

/// Writes the binary cache: magic, version, registry, node table, edge list,
/// typed adjacency, then a CRC32 of everything before it.
pub fn save_cache(g: &HetGraph, path: &Path) -> Result<(), GraphError> {
    let mut e = Enc(Vec::new());
    e.0.extend_from_slice(MAGIC);
    e.u32(VERSION);
    let reg = g.registry();
    e.u32(reg.n_node_types() as u32);
    for s in reg.node_types() {
        e.str(&s.name);
        e.u32(s.dim as u32);
    }
    e.u32(reg.n_edge_types() as u32);
    for name in reg.edge_type_names() {
        e.str(name);
    }
    e.u64(g.n_nodes() as u64);
    for v in 0..g.n_nodes() {
        e.u16(g.node_type(v).0);
        e.str(g.external_id(v));
        for &x in g.features(v) {
            e.f64(x);
        }
    }
    e.u64(g.n_edges() as u64);
    for ed in g.edges() {
        e.u64(ed.src as u64);
        e.u64(ed.dst as u64);
        e.u16(ed.etype.0);
    }
    let (offsets, adj) = g.adjacency_parts();
    e.u64(offsets.len() as u64);
    for &o in offsets {
        e.u64(o as u64);
    }
    e.u64(adj.len() as u64);
    for inc in adj {
        e.u64(inc.nbr as u64);
        e.u64(inc.edge as u64);
        e.u8(inc.out as u8);
    }
    let crc = crc32fast::hash(&e.0);
    e.u32(crc);
    fs::write(path, e.0)?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<HetGraph, GraphError> {
    let buf = fs::read(path)?;
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(GraphError::BadCache("bad magic".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(GraphError::BadCache("checksum mismatch".into()));
    }
    let mut d = Dec { buf: body, pos: 4 };
    let version = d.u32()?;
    if version != VERSION {
        return Err(GraphError::BadCache(format!("unsupported version {version}")));
    }
    let mut reg = TypeRegistry::new();
    for _ in 0..d.u32()? {
        let name = d.str()?;
        let dim = d.u32()? as usize;
        reg.add_node_type(name, dim)?;
    }
    for _ in 0..d.u32()? {
        reg.add_edge_type(d.str()?)?;
    }
    let mut b = GraphBuilder::new(reg);
    let n = d.u64()?;
    let mut x = Vec::new();
    for _ in 0..n {
        let t = NodeTypeId(d.u16()?);
        if t.index() >= b.registry().n_node_types() {
            return Err(GraphError::BadCache("node type out of range".into()));
        }
        let id = d.str()?;
        x.clear();
        for _ in 0..b.registry().dim(t) {
            x.push(d.f64()?);
        }
        b.add_node(id, t, &x)?;
    }
    let m = d.u64()?;
    for _ in 0..m {
        let src = d.u64()? as usize;
        let dst = d.u64()? as usize;
        let t = EdgeTypeId(d.u16()?);
        b.add_edge(src, dst, t)?;
    }
    let g = b.build();
    let (offsets, adj) = g.adjacency_parts();
    let n_off = d.u64()? as usize;
    if n_off != offsets.len() {
        return Err(GraphError::BadCache("adjacency size mismatch".into()));
    }
    for &o in offsets {
        if d.u64()? as usize != o {
            return Err(GraphError::BadCache("adjacency offsets disagree with edge list".into()));
        }
    }
    let n_adj = d.u64()? as usize;
    if n_adj != adj.len() {
        return Err(GraphError::BadCache("adjacency size mismatch".into()));
    }
    for inc in adj {
        let (nbr, edge, out) = (d.u64()? as usize, d.u64()? as usize, d.u8()? == 1);
        if nbr != inc.nbr || edge != inc.edge || out != inc.out {
            return Err(GraphError::BadCache("adjacency entries disagree with edge list".into()));
        }
    }
    if d.pos != body.len() {
        return Err(GraphError::BadCache("trailing bytes".into()));
    }
    Ok(g)
}
