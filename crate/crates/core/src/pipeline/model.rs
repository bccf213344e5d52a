use nalgebra::Vector3;
use ndarray::Array2;

use super::head::{mean_vectors, HeadCache, PointHead};
use super::shapes::{num_shapes, Polycube};
use crate::error::{Error, Result};
use crate::layers::{Mode, Network, NetworkOutput};
use crate::repr::{FieldType, Rotation};
use crate::steering::{compose_pose, enrichment_network, steer_tensor_backward, steer_tensor_with, Pose, Steered, TensorToPoint};
use crate::tensor::{voxelize_on, Grid, PointCloud, SparseTensor};

/// Default backbone architecture.
pub const DEFAULT_BACKBONE: &str = include_str!("../../configs/backbone.cfg");

/// Fraction of the grid spanned by the largest shape.
const FILL: f64 = 0.9;

/// Architecture of a [`PoseModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input grid side length in cells.
    pub grid: u32,
    /// Hidden width of the head coefficient networks.
    pub hidden: usize,
    /// Layer config text of the backbone; it must contain at least one tap.
    pub backbone: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: 32,
            hidden: 32,
            backbone: DEFAULT_BACKBONE.to_string(),
        }
    }
}

impl ModelConfig {
    /// World size of one input cell: the largest shape, centered, spans
    /// 90% of the grid.
    pub fn voxel_size(&self) -> f64 {
        let r = (0..num_shapes())
            .map(|i| Polycube::by_id(i).expect("known shape").radius())
            .fold(0.0, f64::max);
        2.0 * r / (FILL * self.grid as f64)
    }
}

/// Rotation and offset regressors of one stage.
#[derive(Clone, Debug)]
pub struct StageHeads {
    /// Two vectors per point: the first two columns of the rotation.
    pub rotation: PointHead,
    /// One vector per point: offset from the point to the object center.
    pub offset: PointHead,
}

impl StageHeads {
    fn new(field: &FieldType, hidden: usize, plain: bool, seed: u64) -> Result<Self> {
        Ok(StageHeads {
            rotation: PointHead::new(field, hidden, 2, plain, seed)?,
            offset: PointHead::new(field, hidden, 1, plain, seed.wrapping_add(1))?,
        })
    }
}

/// Shared backbone, stage-one heads, and refinement heads fed by steered
/// and enriched feature levels.
#[derive(Clone, Debug)]
pub struct PoseModel {
    config: ModelConfig,
    backbone: Network,
    levels: Vec<FieldType>,
    stage1: StageHeads,
    stage2: StageHeads,
    enrichment: Vec<Network>,
}

/// Forward state of the first stage.
pub struct Stage1Pass {
    pub centroid: Vector3<f64>,
    pub backbone: NetworkOutput,
    sampler: TensorToPoint,
    rotation: (Array2<f64>, HeadCache),
    offset: (Array2<f64>, HeadCache),
    pub pose: Pose,
}

/// Forward state of one refinement round.
pub struct Stage2Pass {
    steered: Vec<Steered>,
    sampler: TensorToPoint,
    /// Points expressed in the frame of the current estimate.
    queries: Vec<Vector3<f64>>,
    rotation: (Array2<f64>, HeadCache),
    offset: (Array2<f64>, HeadCache),
    pub residual: Pose,
}

/// Loss values of one training scene.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SceneLoss {
    pub stage1: f64,
    pub stage2: f64,
}

fn head_pose(rotation: &Array2<f64>, offset: &Array2<f64>, queries: &[Vector3<f64>]) -> Pose {
    let r = mean_vectors(rotation);
    let o = mean_vectors(offset);
    let n = queries.len() as f64;
    let mean_q = queries.iter().fold(Vector3::zeros(), |a, q| a + q) / n;
    Pose::new(Rotation::from_two_vectors(r[0], r[1]), mean_q + o[0])
}

/// Squared-error loss of point-wise predictions against `target`, with
/// gradients on the head outputs.
fn stage_loss(
    rotation: &Array2<f64>,
    offset: &Array2<f64>,
    queries: &[Vector3<f64>],
    target: &Pose,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = queries.len() as f64;
    let m = target.rotation.matrix();
    let want = [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]];
    let mut loss = 0.0;
    let mut d_rot = Array2::zeros(rotation.dim());
    let mut d_off = Array2::zeros(offset.dim());
    for (row, q) in queries.iter().enumerate() {
        for k in 0..6 {
            let e = rotation[[row, k]] - want[k];
            loss += e * e / n;
            d_rot[[row, k]] = 2.0 * e / n;
        }
        let to_center = target.translation - q;
        for k in 0..3 {
            let e = offset[[row, k]] - to_center[k];
            loss += e * e / n;
            d_off[[row, k]] = 2.0 * e / n;
        }
    }
    (loss, d_rot, d_off)
}

impl PoseModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let backbone = Network::from_config(&config.backbone, Some(&FieldType::scalars(4)), seed)?;
        let levels = backbone.tap_fields();
        if levels.is_empty() {
            return Err(Error::InvalidArgument("backbone config needs at least one tap".into()));
        }
        let refs: Vec<&FieldType> = levels.iter().collect();
        let head_field = FieldType::concat(&refs);
        let stage1 = StageHeads::new(&head_field, config.hidden, false, seed.wrapping_add(101))?;
        let stage2 = StageHeads::new(&head_field, config.hidden, true, seed.wrapping_add(202))?;
        let enrichment = levels
            .iter()
            .enumerate()
            .map(|(i, f)| enrichment_network(f, seed.wrapping_add(303 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoseModel {
            config,
            backbone,
            levels,
            stage1,
            stage2,
            enrichment,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Network {
        &self.backbone
    }

    pub fn enrichment(&self) -> &[Network] {
        &self.enrichment
    }

    pub fn stage_heads(&self) -> (&StageHeads, &StageHeads) {
        (&self.stage1, &self.stage2)
    }

    /// Text that identifies the architecture; checkpoints store it.
    pub fn architecture(&self) -> String {
        format!(
            "grid={}\nhidden={}\nvoxel_size={:e}\n{}\n",
            self.config.grid,
            self.config.hidden,
            self.config.voxel_size(),
            self.backbone.describe()
        )
    }

    /// Sizes of the parameter blocks, in [`params`](Self::params) order.
    pub fn param_blocks(&self) -> Vec<(String, usize)> {
        let mut b = vec![
            ("backbone".to_string(), self.backbone.num_params()),
            ("stage1.rotation".into(), self.stage1.rotation.num_params()),
            ("stage1.offset".into(), self.stage1.offset.num_params()),
            ("stage2.rotation".into(), self.stage2.rotation.num_params()),
            ("stage2.offset".into(), self.stage2.offset.num_params()),
        ];
        for (i, e) in self.enrichment.iter().enumerate() {
            b.push((format!("enrichment.{i}"), e.num_params()));
        }
        b
    }

    pub fn num_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.1).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.backbone.params();
        p.extend(self.stage1.rotation.params());
        p.extend(self.stage1.offset.params());
        p.extend(self.stage2.rotation.params());
        p.extend(self.stage2.offset.params());
        for e in &self.enrichment {
            p.extend(e.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!("model has {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &p[at..at + n];
            at += n;
            s
        };
        self.backbone.set_params(take(self.backbone.num_params()))?;
        self.stage1.rotation.set_params(take(self.stage1.rotation.num_params()))?;
        self.stage1.offset.set_params(take(self.stage1.offset.num_params()))?;
        self.stage2.rotation.set_params(take(self.stage2.rotation.num_params()))?;
        self.stage2.offset.set_params(take(self.stage2.offset.num_params()))?;
        for e in &mut self.enrichment {
            let n = e.num_params();
            e.set_params(take(n))?;
        }
        Ok(())
    }

    /// Running statistics of all normalization layers, by name.
    pub fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        let nets = std::iter::once(("backbone".to_string(), &self.backbone))
            .chain(self.enrichment.iter().enumerate().map(|(i, e)| (format!("enrichment.{i}"), e)));
        for (prefix, net) in nets {
            for (li, layer) in net.layers().iter().enumerate() {
                for (name, data) in layer.buffers() {
                    out.push((format!("{prefix}.{li}.{name}"), data));
                }
            }
        }
        out
    }

    pub fn set_buffer(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let unknown = || Error::Unknown {
            what: "model buffer",
            name: name.to_string(),
        };
        let mut parts = name.splitn(2, '.');
        let head = parts.next().ok_or_else(unknown)?;
        let rest = parts.next().ok_or_else(unknown)?;
        let (net, rest) = if head == "backbone" {
            (&mut self.backbone, rest)
        } else if head == "enrichment" {
            let (i, rest) = rest.split_once('.').ok_or_else(unknown)?;
            let i: usize = i.parse().map_err(|_| unknown())?;
            (self.enrichment.get_mut(i).ok_or_else(unknown)?, rest)
        } else {
            return Err(unknown());
        };
        let (li, buf) = rest.split_once('.').ok_or_else(unknown)?;
        let li: usize = li.parse().map_err(|_| unknown())?;
        // buffers are running statistics, not parameters: a raw layer handle
        // is fine and the version bump is harmless
        let layer = net.layers_mut().get_mut(li).ok_or_else(unknown)?;
        layer.set_buffer(buf, data)
    }

    /// Input grid centered on `centroid`.
    pub fn grid_at(&self, centroid: &Vector3<f64>) -> Grid {
        let v = self.config.voxel_size();
        let half = 0.5 * (self.config.grid as f64 - 1.0) * v;
        Grid {
            voxel_size: v,
            origin: [centroid.x - half, centroid.y - half, centroid.z - half],
            extent: [self.config.grid; 3],
        }
    }

    /// Voxelized input (mean color plus a constant channel) and the cloud
    /// centroid.
    pub fn encode(&self, cloud: &PointCloud) -> Result<(SparseTensor, Vector3<f64>)> {
        let c = cloud.centroid().ok_or(Error::EmptyCloud)?;
        Ok((voxelize_on(cloud, self.grid_at(&c))?, c))
    }

    pub fn stage1(&self, cloud: &PointCloud, mode: Mode) -> Result<Stage1Pass> {
        let (input, centroid) = self.encode(cloud)?;
        let backbone = self.backbone.forward(&input, mode)?;
        let taps: Vec<&SparseTensor> = backbone.taps.iter().collect();
        let sampler = TensorToPoint::new(&taps, &cloud.points)?;
        let feats = sampler.apply(&taps)?;
        let rotation = self.stage1.rotation.forward(feats.view())?;
        let offset = self.stage1.offset.forward(feats.view())?;
        let pose = head_pose(&rotation.0, &offset.0, &cloud.points);
        Ok(Stage1Pass {
            centroid,
            backbone,
            sampler,
            rotation,
            offset,
            pose,
        })
    }

    /// One refinement round: steers every tap by the inverse of `current`
    /// and predicts the residual pose in the frame of `current`.
    pub fn stage2(&self, first: &Stage1Pass, cloud: &PointCloud, current: &Pose, mode: Mode) -> Result<Stage2Pass> {
        let inverse = current.inverse();
        let mut steered = Vec::with_capacity(self.levels.len());
        for (tap, net) in first.backbone.taps.iter().zip(&self.enrichment) {
            let mut target = *tap.grid();
            for a in 0..3 {
                target.origin[a] -= first.centroid[a];
            }
            steered.push(steer_tensor_with(tap, &inverse, &target, Some(net), mode)?);
        }
        let queries: Vec<Vector3<f64>> = cloud.points.iter().map(|p| inverse.apply(p)).collect();
        let levels: Vec<&SparseTensor> = steered.iter().map(|s| &s.output).collect();
        let sampler = TensorToPoint::new(&levels, &queries)?;
        let feats = sampler.apply(&levels)?;
        let rotation = self.stage2.rotation.forward(feats.view())?;
        let offset = self.stage2.offset.forward(feats.view())?;
        let residual = head_pose(&rotation.0, &offset.0, &queries);
        Ok(Stage2Pass {
            steered,
            sampler,
            queries,
            rotation,
            offset,
            residual,
        })
    }

    /// Stage-one pose followed by `refine_iters` refinement rounds.
    pub fn predict_pose(&self, cloud: &PointCloud, refine_iters: usize) -> Result<Pose> {
        Ok(*self.predict_trajectory(cloud, refine_iters)?.last().expect("stage-one pose"))
    }

    /// The pose after stage one and after each refinement round.
    pub fn predict_trajectory(&self, cloud: &PointCloud, refine_iters: usize) -> Result<Vec<Pose>> {
        let first = self.stage1(cloud, Mode::Eval)?;
        let mut poses = vec![first.pose];
        for _ in 0..refine_iters {
            let current = *poses.last().expect("non-empty");
            let pass = self.stage2(&first, cloud, &current, Mode::Eval)?;
            poses.push(compose_pose(&current, &pass.residual));
        }
        Ok(poses)
    }

    /// Loss and parameter gradient on one scene with known pose. Stage two
    /// refines the stage-one estimate once; its gradient stops at the
    /// steered features and does not reach the backbone.
    pub fn loss_and_grad(&self, cloud: &PointCloud, truth: &Pose) -> Result<(SceneLoss, Vec<f64>, Stage1Pass, Stage2Pass)> {
        let first = self.stage1(cloud, Mode::Train)?;
        let (l1, d_rot, d_off) = stage_loss(&first.rotation.0, &first.offset.0, &cloud.points, truth);
        let (g_rot_in, g_rot) = self.stage1.rotation.backward(&first.rotation.1, d_rot.view())?;
        let (g_off_in, g_off) = self.stage1.offset.backward(&first.offset.1, d_off.view())?;
        let tap_grads = first.sampler.backward((g_rot_in + g_off_in).view())?;
        let backbone_grads = self.backbone.backward(
            &first.backbone.tape,
            None,
            &tap_grads.into_iter().map(Some).collect::<Vec<_>>(),
        )?;

        let second = self.stage2(&first, cloud, &first.pose, Mode::Train)?;
        let residual_truth = compose_pose(&first.pose.inverse(), truth);
        let (l2, d_rot2, d_off2) = stage_loss(&second.rotation.0, &second.offset.0, &second.queries, &residual_truth);
        let (g_rot2_in, g_rot2) = self.stage2.rotation.backward(&second.rotation.1, d_rot2.view())?;
        let (g_off2_in, g_off2) = self.stage2.offset.backward(&second.offset.1, d_off2.view())?;
        let level_grads = second.sampler.backward((g_rot2_in + g_off2_in).view())?;
        let mut grads = backbone_grads.params;
        grads.extend(g_rot);
        grads.extend(g_off);
        grads.extend(g_rot2);
        grads.extend(g_off2);
        for ((steered, net), g) in second.steered.iter().zip(&self.enrichment).zip(&level_grads) {
            grads.extend(steer_tensor_backward(steered, Some(net), g.view())?.1);
        }
        Ok((SceneLoss { stage1: l1, stage2: l2 }, grads, first, second))
    }

    /// Folds the normalization statistics of a training pass into the
    /// running averages.
    pub fn commit(&mut self, first: &Stage1Pass, second: &Stage2Pass) {
        self.backbone.commit(&first.backbone.tape);
        for (net, s) in self.enrichment.iter_mut().zip(&second.steered) {
            if let Some(out) = &s.enrichment {
                net.commit(&out.tape);
            }
        }
    }
}
