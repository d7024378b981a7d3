use super::codec::Message;
use super::transport::Link;
use super::RoundUpdate;
use crate::adam::Adam;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    epoch_seed, evaluate_with_loss, new_optimizer, train_epoch, LossConfig, Model, ModelSpec,
    TrainConfig,
};

/// A federated client: its private shard plus local model and optimizer.
///
/// The Adam moments live on the client and carry over between rounds; only
/// parameters travel. Local epoch `e` (counted over the client's lifetime)
/// shuffles with `epoch_seed(seed + client_id, e)`, so client 0 of a
/// single-client federation replays centralized training exactly.
pub struct Client {
    pub client_id: u32,
    model: Model,
    optimizer: Adam,
    data: Dataset,
    local_epochs: usize,
    batch_size: usize,
    loss_config: LossConfig,
    seed: u64,
    epochs_done: u64,
}

impl Client {
    pub fn new(
        client_id: u32,
        spec: ModelSpec,
        data: Dataset,
        train: &TrainConfig,
        local_epochs: usize,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset(format!("shard of client {client_id}")));
        }
        let model = Model::new(spec, seed)?;
        let optimizer = new_optimizer(&model, train.adam);
        Ok(Self {
            client_id,
            model,
            optimizer,
            data,
            local_epochs,
            batch_size: train.batch_size,
            loss_config: train.loss_config()?,
            seed: seed.wrapping_add(client_id as u64),
            epochs_done: 0,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len()
    }

    /// Trains `local_epochs` epochs from `global_params`.
    pub fn local_update(&mut self, global_params: &[f64]) -> Result<RoundUpdate> {
        self.model.set_params_flat(global_params)?;
        let mut last = None;
        for _ in 0..self.local_epochs {
            let stats = train_epoch(
                &mut self.model,
                &self.data,
                &mut self.optimizer,
                &self.loss_config,
                self.batch_size,
                epoch_seed(self.seed, self.epochs_done),
            )?;
            self.epochs_done += 1;
            last = Some((stats.mean_loss, stats.metrics));
        }
        let (mean_loss, metrics) = match last {
            Some(l) => l,
            None => {
                let e = evaluate_with_loss(&self.model, &self.data, &self.loss_config)?;
                (e.mean_loss, e.metrics)
            }
        };
        Ok(RoundUpdate {
            client_id: self.client_id,
            params: self.model.params_flat(),
            n_samples: self.data.len() as u64,
            mean_loss,
            metrics,
        })
    }

    /// Joins over `link` and answers every `GLOBAL_MODEL` with a
    /// `LOCAL_UPDATE` until `SHUTDOWN`.
    pub fn serve(mut self, link: &mut dyn Link) -> Result<()> {
        link.send(&Message::Join {
            client_id: self.client_id,
        })?;
        loop {
            match link.recv()? {
                Message::GlobalModel { round, params } => {
                    log::debug!("client {} round {round}", self.client_id);
                    let update = self.local_update(&params)?;
                    link.send(&Message::LocalUpdate(update))?;
                }
                Message::Metrics(m) => {
                    log::debug!("client {} global accuracy {:.4}", self.client_id, m.accuracy);
                }
                Message::Shutdown => return Ok(()),
                other => {
                    return Err(Error::Transport(format!(
                        "client {} got unexpected {}",
                        self.client_id,
                        other.kind()
                    )))
                }
            }
        }
    }
}
