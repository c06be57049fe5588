//! Cluster-aware two-step QEM simplification.
//!
//! Step 1 collapses edges inside each cluster (in parallel, cluster and
//! mesh boundaries locked) down to a per-cluster face target. Step 2 runs
//! one global heap over cluster-boundary and mesh-boundary edges until the
//! global face budget is met.

mod collapse;

pub use collapse::Quadric;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::IndexedMesh;
use crate::par;
use crate::partition::{ClusterSet, PlaneProxy};
use collapse::{Collapser, EdgeFilter};

/// Weight of the virtual planes that hold open mesh boundaries in place.
const BOUNDARY_PENALTY: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifyPlan {
    /// Face target of each cluster after step 1.
    pub cluster_targets: Vec<usize>,
    /// Cluster-boundary plus mesh-boundary edges expected after step 2.
    pub boundary_target: usize,
    /// Final face budget.
    pub global_budget: usize,
}

/// Sum of the face-plane quadrics around `v`.
pub fn vertex_quadric(mesh: &IndexedMesh, v: usize) -> Result<Quadric> {
    let mut q = Quadric::zero();
    let mut any = false;
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.contains(&v) {
            q += face_quadric(mesh, f);
            any = true;
        }
    }
    if any {
        Ok(q)
    } else {
        Err(Error::InvalidMesh(format!("vertex {v} has no incident faces")))
    }
}

fn face_quadric(mesh: &IndexedMesh, f: usize) -> Quadric {
    let n = mesh.face_normal(f);
    let d = -n.dot(&mesh.vertices[mesh.faces[f][0]]);
    Quadric::from_plane(&n, d, 1.0)
}

/// Quadrics of every vertex: face planes plus boundary-edge penalty planes.
fn all_quadrics(mesh: &IndexedMesh) -> Vec<Quadric> {
    let mut q = vec![Quadric::zero(); mesh.num_vertices()];
    for f in 0..mesh.num_faces() {
        let fq = face_quadric(mesh, f);
        for &v in &mesh.faces[f] {
            q[v] += fq;
        }
    }
    for e in mesh.edges() {
        if e.faces.len() == 1 {
            let [a, b] = e.v;
            let n = mesh.face_normal(e.faces[0]);
            let side = (mesh.vertices[b] - mesh.vertices[a]).cross(&n);
            if side.norm() > 0.0 {
                let side = side.normalize();
                let bq = Quadric::from_plane(&side, -side.dot(&mesh.vertices[a]), BOUNDARY_PENALTY);
                q[a] += bq;
                q[b] += bq;
            }
        }
    }
    q
}

/// Splits `budget` as evenly as possible across clusters of the given
/// sizes, never above a cluster's size and never below `min_faces` (or its
/// size, if smaller). Budget a small cluster cannot use goes to the others.
pub fn water_fill(sizes: &[usize], budget: usize, min_faces: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (sizes[i], i));
    let mut out = vec![0; sizes.len()];
    let mut remaining = budget;
    for (pos, &i) in order.iter().enumerate() {
        let left = sizes.len() - pos;
        let share = remaining / left;
        if sizes[i] <= share {
            out[i] = sizes[i];
            remaining -= sizes[i];
        } else {
            // all larger clusters take the equal share; spread the remainder
            let rest = &order[pos..];
            let mut by_index = rest.to_vec();
            by_index.sort_unstable();
            let extra = remaining - share * left;
            for (k, &j) in by_index.iter().enumerate() {
                out[j] = share + usize::from(k < extra);
            }
            break;
        }
    }
    out.iter()
        .zip(sizes)
        .map(|(&t, &s)| t.max(min_faces).min(s))
        .collect()
}

/// Budgets for both steps. With `F` input faces the final budget is
/// `round(ratio·F)`. Boundary edge counts are expected to shrink with the
/// square root of the ratio; the faces their removal frees are added to
/// the step-1 budget, which is then water-filled across clusters.
pub fn make_plan(mesh: &IndexedMesh, clusters: &ClusterSet, ratio: f64, min_faces: usize) -> SimplifyPlan {
    let f = mesh.num_faces();
    let budget = ((ratio * f as f64).round() as usize).clamp(1, f);
    let (mut cluster_edges, mut mesh_edges) = (0usize, 0usize);
    for e in mesh.edges() {
        if e.faces.len() == 1 {
            mesh_edges += 1;
        } else if e.faces.iter().any(|&g| clusters.face_labels[g] != clusters.face_labels[e.faces[0]]) {
            cluster_edges += 1;
        }
    }
    let keep = |e: usize| ((e as f64) * ratio.sqrt()).ceil() as usize;
    let (tc, tm) = (keep(cluster_edges), keep(mesh_edges));
    let step1 = (budget + 2 * (cluster_edges - tc) + (mesh_edges - tm)).min(f);
    let sizes: Vec<usize> = clusters.cluster_faces().iter().map(Vec::len).collect();
    SimplifyPlan {
        cluster_targets: water_fill(&sizes, step1, min_faces),
        boundary_target: tc + tm,
        global_budget: budget,
    }
}

/// Mesh after step 1 with vertex ids preserved (removed vertices are left
/// unreferenced) and the accumulated quadrics.
#[derive(Debug, Clone)]
pub struct Step1Output {
    pub mesh: IndexedMesh,
    pub face_labels: Vec<usize>,
    pub quadrics: Vec<Quadric>,
}

/// Output mesh (compacted, with per-vertex labels) and per-face labels.
#[derive(Debug, Clone)]
pub struct Simplified {
    pub mesh: IndexedMesh,
    pub face_labels: Vec<usize>,
    pub step1_faces: usize,
}

/// Vertices touching faces of two or more clusters, and vertices on open
/// mesh boundaries.
pub fn boundary_vertices(mesh: &IndexedMesh, face_labels: &[usize]) -> (Vec<bool>, Vec<bool>) {
    let mut first = vec![usize::MAX; mesh.num_vertices()];
    let mut cluster_b = vec![false; mesh.num_vertices()];
    for (f, face) in mesh.faces.iter().enumerate() {
        for &v in face {
            if first[v] == usize::MAX {
                first[v] = face_labels[f];
            } else if first[v] != face_labels[f] {
                cluster_b[v] = true;
            }
        }
    }
    let mut mesh_b = vec![false; mesh.num_vertices()];
    for e in mesh.edges() {
        if e.faces.len() == 1 {
            mesh_b[e.v[0]] = true;
            mesh_b[e.v[1]] = true;
        }
    }
    (cluster_b, mesh_b)
}

struct LocalResult {
    /// Local-to-global vertex ids.
    verts: Vec<usize>,
    pos: Vec<crate::mesh::Point3>,
    quad: Vec<Quadric>,
    faces: Vec<[usize; 3]>,
    alive: Vec<bool>,
}

/// Step 1: per-cluster collapses of inner edges, boundaries locked.
pub fn simplify_step1(mesh: &IndexedMesh, clusters: &ClusterSet, plan: &SimplifyPlan) -> Result<Step1Output> {
    let k = clusters.num_clusters();
    if plan.cluster_targets.len() != k || clusters.face_labels.len() != mesh.num_faces() {
        return Err(Error::InvalidInput("plan and clusters do not match the mesh".into()));
    }
    let quad = all_quadrics(mesh);
    let (cluster_b, mesh_b) = boundary_vertices(mesh, &clusters.face_labels);
    let locked: Vec<bool> = cluster_b.iter().zip(&mesh_b).map(|(a, b)| *a || *b).collect();
    let neighbors = mesh.vertex_neighbors();
    let groups = clusters.cluster_faces();

    let results: Vec<LocalResult> = par::map_range(k, |c| {
        let faces_c = &groups[c];
        let mut verts: Vec<usize> = faces_c.iter().flat_map(|&f| mesh.faces[f]).collect();
        verts.sort_unstable();
        verts.dedup();
        let local = |g: usize| verts.binary_search(&g).unwrap();
        let faces: Vec<[usize; 3]> = faces_c.iter().map(|&f| mesh.faces[f].map(local)).collect();
        let lpos = verts.iter().map(|&g| mesh.vertices[g]).collect();
        let lquad = verts.iter().map(|&g| quad[g]).collect();
        let llock: Vec<bool> = verts.iter().map(|&g| locked[g]).collect();
        let mut col = Collapser::new(
            lpos,
            lquad,
            faces,
            vec![0; faces_c.len()],
            1,
            llock,
            vec![c; verts.len()],
            EdgeFilter::Unlocked,
        );
        col.label_normals = vec![clusters.proxies[c].normal];
        // edges between locked vertices that exist outside this cluster
        for (li, &g) in verts.iter().enumerate() {
            if !locked[g] {
                continue;
            }
            for &n in &neighbors[g] {
                if locked[n] {
                    if let Ok(ln) = verts.binary_search(&n) {
                        col.extra[li].push(ln);
                    }
                }
            }
        }
        col.seed_heap();
        let target = plan.cluster_targets[c];
        let n = col.run(|s| s.alive_faces <= target);
        debug!("step 1 cluster {c}: {} -> {} faces ({n} collapses)", faces_c.len(), col.alive_faces);
        LocalResult {
            verts,
            pos: col.pos,
            quad: col.quad,
            faces: col.faces,
            alive: col.face_alive,
        }
    });

    let mut vertices = mesh.vertices.clone();
    let mut quadrics = quad.clone();
    let mut faces = Vec::new();
    let mut labels = Vec::new();
    for (c, r) in results.iter().enumerate() {
        for (li, &g) in r.verts.iter().enumerate() {
            if locked[g] {
                quadrics[g] += r.quad[li] - quad[g];
            } else {
                vertices[g] = r.pos[li];
                quadrics[g] = r.quad[li];
            }
        }
        for (f, face) in r.faces.iter().enumerate() {
            if r.alive[f] {
                faces.push(face.map(|l| r.verts[l]));
                labels.push(c);
            }
        }
    }
    let mesh = IndexedMesh::new(vertices, faces)?;
    Ok(Step1Output {
        mesh,
        face_labels: labels,
        quadrics,
    })
}

/// Step 2: one global heap over boundary edges down to the face budget.
pub fn simplify_step2(step1: Step1Output, proxies: &[PlaneProxy], plan: &SimplifyPlan) -> Result<Simplified> {
    let Step1Output {
        mesh,
        face_labels,
        quadrics,
    } = step1;
    let step1_faces = mesh.num_faces();
    let num_clusters = proxies.len();
    let vlabel = ClusterSet {
        face_labels: face_labels.clone(),
        proxies: proxies.to_vec(),
    }
    .vertex_labels(&mesh);
    let nv = mesh.num_vertices();
    let mut col = Collapser::new(
        mesh.vertices,
        quadrics,
        mesh.faces,
        face_labels,
        num_clusters,
        vec![false; nv],
        vlabel,
        EdgeFilter::Boundary,
    );
    col.label_normals = proxies.iter().map(|p| p.normal).collect();
    col.seed_heap();
    let budget = plan.global_budget;
    let n = col.run(|s| s.alive_faces <= budget);
    info!(
        "simplify: step 1 left {step1_faces} faces, step 2 made {n} boundary collapses -> {} faces (budget {budget})",
        col.alive_faces
    );
    let mut faces = Vec::with_capacity(col.alive_faces);
    let mut labels = Vec::with_capacity(col.alive_faces);
    for f in 0..col.faces.len() {
        if col.face_alive[f] {
            faces.push(col.faces[f]);
            labels.push(col.face_label[f]);
        }
    }
    let mut out = IndexedMesh::new(col.pos, faces)?;
    out.vertex_labels = Some(col.vlabel);
    out.compact();
    Ok(Simplified {
        mesh: out,
        face_labels: labels,
        step1_faces,
    })
}

pub fn simplify_two_step(mesh: &IndexedMesh, clusters: &ClusterSet, plan: &SimplifyPlan) -> Result<Simplified> {
    let s1 = simplify_step1(mesh, clusters, plan)?;
    simplify_step2(s1, &clusters.proxies, plan)
}

/// Comparison baseline: classic single-heap QEM over all edges, ignoring
/// clusters, with the same collapse checks and boundary penalty.
pub fn simplify_global_qem(mesh: &IndexedMesh, target_faces: usize) -> Result<IndexedMesh> {
    let quad = all_quadrics(mesh);
    let nv = mesh.num_vertices();
    let mut col = Collapser::new(
        mesh.vertices.clone(),
        quad,
        mesh.faces.clone(),
        vec![0; mesh.num_faces()],
        1,
        vec![false; nv],
        vec![0; nv],
        EdgeFilter::Unlocked,
    );
    col.seed_heap();
    col.run(|s| s.alive_faces <= target_faces);
    let faces: Vec<[usize; 3]> = (0..col.faces.len())
        .filter(|&f| col.face_alive[f])
        .map(|f| col.faces[f])
        .collect();
    let mut out = IndexedMesh::new(col.pos, faces)?;
    out.compact();
    Ok(out)
}
