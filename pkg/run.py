import os
import sys

from flask.cli import ScriptInfo

from app import create_app
from config import config

try:
    app = create_app(config[os.environ.get('ORCU_ENV', 'default')])
except Exception as e:
    print(f"FATAL ERROR: Failed to create app: {e}", file=sys.stderr)
    sys.exit(1)

if __name__ == '__main__':
    with app.app_context():
        app.cli.main(prog_name='orcu', obj=ScriptInfo(create_app=lambda *_: app))
