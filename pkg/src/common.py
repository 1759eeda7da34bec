"""Constants for the ofdm-amc program."""

APP_NAME = 'ofdm-amc'

# Environment fallback for --seed.
SEED_ENV = 'AMC_SEED'

CONFIG_FILE = 'config.json'
MANIFEST_FILE = 'manifest.json'
RECORDS_FILE = 'records.bin'
HISTORY_FILE = 'history.csv'
CHECKPOINT_EXT = 'ckpt'

SPLITS = ('lwnn-train', 'lwnn-test', 'rnnbc-train', 'rnnbc-test')
# Folded into per-capture seeds so that splits sharing a seed never share captures.
SPLIT_CODES = {split: i for i, split in enumerate(SPLITS)}

MODEL_LWNN = 'lwnn'
MODEL_RNNBC = 'rnnbc'
MODE_LWNN_ONLY = 'lwnn-only'
MODE_COMBINED = 'combined'

# Parameter counts of literature classifiers, used only in the complexity table.
LITERATURE_MODELS = (('VGG', 257_000), ('ResNet', 236_000), ('CNN-AMC', 575_000))
# Published per-inference cost of the sequence classifier and FLOPs of the CNN.
PUBLISHED_RNNBC_FLOPS = 75_520
PUBLISHED_LWNN_FLOPS = 48_900_000

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

STATUS_READY = 'ready'
STATUS_GENERATE = 'generating'
STATUS_VERIFY = 'verifying'
STATUS_TRAIN = 'training'
STATUS_EVAL = 'evaluating'
STATUS_FLOPS = 'counting'
