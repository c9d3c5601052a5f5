use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] diffmn_nn::Error),
    #[error("invalid series `{id}`: {reason}")]
    InvalidSeries { id: String, reason: String },
    #[error("channel {channel} of series `{id}` has no observed points")]
    UnfitChannel { id: String, channel: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("latent state became non-finite at t = {time}")]
    BlowUp { time: f64 },
    #[error("{stage} diverged: {detail}")]
    Diverged { stage: &'static str, detail: String },
    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
