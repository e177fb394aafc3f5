import logging
import os

from flask import Flask

from config import Config

__version__ = '0.1.0'


def create_app(config_class=Config):
    app = Flask(__name__)
    app.config.from_object(config_class)

    configure_logging(app)

    # Create output folder if it doesn't exist
    output_dir = app.config.get('OUTPUT_DIR')
    if output_dir and not os.path.exists(output_dir):
        os.makedirs(output_dir, exist_ok=True)

    # Initialize services
    with app.app_context():
        from app.services.file_service import get_file_service
        from app.services.trainer_service import get_trainer_service

        file_service = get_file_service()
        file_service.initialize()

        trainer_service = get_trainer_service()
        trainer_service.initialize()

    # Register commands
    from app import commands
    app.register_blueprint(commands.bp)

    return app


def configure_logging(app):
    """Library modules log under app.*, so they inherit the app logger level and handler"""
    level = getattr(logging, str(app.config.get('LOG_LEVEL', 'INFO')).upper(), logging.INFO)
    app.logger.setLevel(level)
