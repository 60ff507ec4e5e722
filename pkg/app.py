# app.py
from dotenv import load_dotenv

# Cargar variables de entorno desde .env (antes de importar Config)
load_dotenv()

from afidaf import create_cli

# Creamos la CLI usando la fábrica
cli = create_cli()

if __name__ == '__main__':
    cli()
