from dotenv import load_dotenv

from uck import create_cli

load_dotenv()

cli = create_cli()

if __name__ == '__main__':
    cli()
