from dotenv import load_dotenv
from pydantic_settings import BaseSettings

load_dotenv()


class Settings(BaseSettings):
    MCE_OUTPUT_DIR: str = "artifacts"


settings = Settings()
