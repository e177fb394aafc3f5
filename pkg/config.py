import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Output
    OUTPUT_DIR = os.environ.get('ORCU_OUTPUT_DIR') or os.path.join(os.getcwd(), 'runs')
    LOG_LEVEL = os.environ.get('ORCU_LOG_LEVEL', 'INFO').upper()
    TESTING = False

    # Soft encoding / regularizer
    DEFAULT_T = float(os.environ.get('ORCU_DEFAULT_T', 3.0))
    DEFAULT_DISTANCE = os.environ.get('ORCU_DEFAULT_DISTANCE', 'squared')
    HUBER_DELTA = 1.0
    LS_EPSILON = 0.1

    # Metrics
    NUM_BINS = int(os.environ.get('ORCU_NUM_BINS', 15))
    NUM_RANGES = int(os.environ.get('ORCU_NUM_RANGES', 15))
    T_SWEEP = (1.0, 3.0, 5.0, 7.0, 10.0)

    # Training
    LEARNING_RATE_LINEAR = 0.05
    LEARNING_RATE_MLP = 0.01
    EPOCHS = int(os.environ.get('ORCU_EPOCHS', 200))
    BATCH_SIZE = int(os.environ.get('ORCU_BATCH_SIZE', 64))
    HIDDEN_DIM = 32
    REDUCTION = 'mean'
    SPLIT = (0.8, 0.1, 0.1)
    COMPARE_SEEDS = (0, 1, 2, 3, 4)

    # Gradient checks
    GRADCHECK_INSTANCES = 1000
    GRADCHECK_TOLERANCE = 1e-6

class DevelopmentConfig(Config):
    LOG_LEVEL = 'DEBUG'

class ProductionConfig(Config):
    LOG_LEVEL = 'WARNING'

class TestingConfig(Config):
    TESTING = True
    LOG_LEVEL = 'WARNING'
    EPOCHS = 20

config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': Config
}
