# SERVICE_REGIONS = None
SERVICE_REGIONS = ["us-west-1", "us-sanjose-1", "westus"]

# special symbols, in vocabulary index order
PAD_SYMBOL = "<pad>"
BOS_SYMBOL = "<s>"
EOS_SYMBOL = "</s>"
UNK_SYMBOL = "<unk>"
SPECIAL_SYMBOLS = (PAD_SYMBOL, BOS_SYMBOL, EOS_SYMBOL, UNK_SYMBOL)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(len(SPECIAL_SYMBOLS))

NONE_LABEL = "NONE"

CHECKPOINT_MAGIC = b"MSVEDCKP"
CHECKPOINT_VERSION = 1

# independent random streams derived from the run seed
INIT_STREAM = 0
NOISE_STREAM = 1
SHUFFLE_STREAM = 2

UNIFORM_CLAMP = 1e-12

METRICS_FILENAME = "metrics.jsonl"
CHECKPOINT_FILENAME = "checkpoint.msved"
LAST_CHECKPOINT_FILENAME = "last.msved"
RESOLVED_CONFIG_FILENAME = "resolved_config.json"
