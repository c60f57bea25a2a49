from database.database import engine
from database.models import Base


def init_db(bind=None):
    Base.metadata.create_all(bind=bind or engine)


if __name__ == "__main__":
    init_db()
    print("Run registry tables created successfully!")
