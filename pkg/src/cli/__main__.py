from src.cli.commands import app

if __name__ == "__main__":
    app(prog_name="mce")
